//! Wire messages of both election protocols.
//!
//! The serialized form (`msgType` tag plus `msgFields` object) is the one
//! written to traces and read back by the trace verifier.

use serde::{Deserialize, Serialize};

use crate::protocol::{Position, Ticket};

/// Which side of a dispute a [`Verdict`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Wins,
    Loses,
}

/// One half of a decide reply: a position and whether it won.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub pos: Position,
    pub result: Outcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "msgType", content = "msgFields", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Request(Position),
    Approved(Position),
    Declined(Position),
    Decide(Position),
    DecideReply {
        contender: Verdict,
        chosen: Verdict,
    },
    /// Leader announcement; `phase` is always 0 on the wire.
    Leader {
        rank: u64,
        phase: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u32>,
    },
    SyncRequest(Ticket),
    SyncReply(Ticket),
    Winner(Ticket),
}

/// Coarse message classes used for the per-class CSV columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageClass {
    Request,
    Reply,
    Decide,
    Leader,
}

impl Message {
    pub fn leader(ticket: Ticket) -> Message {
        Message::Leader { rank: ticket.rank, phase: 0, id: ticket.id }
    }

    pub fn decide_reply(contender: Position, chosen: Position, contender_wins: bool) -> Message {
        let (c, v) = if contender_wins { (Outcome::Wins, Outcome::Loses) } else { (Outcome::Loses, Outcome::Wins) };
        Message::DecideReply {
            contender: Verdict { pos: contender, result: c },
            chosen: Verdict { pos: chosen, result: v },
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Message::Request(_) => "REQUEST",
            Message::Approved(_) => "APPROVED",
            Message::Declined(_) => "DECLINED",
            Message::Decide(_) => "DECIDE",
            Message::DecideReply { .. } => "DECIDE_REPLY",
            Message::Leader { .. } => "LEADER",
            Message::SyncRequest(_) => "SYNC_REQUEST",
            Message::SyncReply(_) => "SYNC_REPLY",
            Message::Winner(_) => "WINNER",
        }
    }

    pub fn class(&self) -> MessageClass {
        match self {
            Message::Request(_) | Message::SyncRequest(_) => MessageClass::Request,
            Message::Approved(_) | Message::Declined(_) | Message::SyncReply(_) => MessageClass::Reply,
            Message::Decide(_) | Message::DecideReply { .. } => MessageClass::Decide,
            Message::Leader { .. } | Message::Winner(_) => MessageClass::Leader,
        }
    }
}

/// The class of the message with wire tag `tag`.
pub fn class_of_tag(tag: &str) -> Option<MessageClass> {
    Some(match tag {
        "REQUEST" | "SYNC_REQUEST" => MessageClass::Request,
        "APPROVED" | "DECLINED" | "SYNC_REPLY" => MessageClass::Reply,
        "DECIDE" | "DECIDE_REPLY" => MessageClass::Decide,
        "LEADER" | "WINNER" => MessageClass::Leader,
        _ => return None,
    })
}

pub const ALL_TAGS: [&str; 9] =
    ["REQUEST", "APPROVED", "DECLINED", "DECIDE", "DECIDE_REPLY", "LEADER", "SYNC_REQUEST", "SYNC_REPLY", "WINNER"];

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(rank: u64, phase: u32) -> Position {
        Position { rank, phase, tiebreak: None }
    }

    #[test]
    fn wire_format() {
        let m = Message::Request(pos(7, 1));
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"msgType":"REQUEST","msgFields":{"rank":7,"phase":1}}"#);
        let m = Message::decide_reply(pos(9, 2), pos(5, 3), false);
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"msgType":"DECIDE_REPLY","msgFields":{"contender":{"rank":9,"phase":2,"result":"loses"},"chosen":{"rank":5,"phase":3,"result":"wins"}}}"#
        );
        let m = Message::leader(Ticket { rank: 4, id: Some(3) });
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"msgType":"LEADER","msgFields":{"rank":4,"phase":0,"id":3}}"#
        );
    }

    #[test]
    fn parses_back() {
        let msgs = [
            Message::Declined(Position { rank: 3, phase: 2, tiebreak: Some(9) }),
            Message::decide_reply(pos(1, 1), pos(2, 2), true),
            Message::SyncReply(Ticket { rank: 12, id: None }),
            Message::Winner(Ticket { rank: 12, id: Some(1) }),
        ];
        for m in msgs {
            let s = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Message>(&s).unwrap(), m);
            assert!(s.contains(m.tag()));
        }
    }
}
