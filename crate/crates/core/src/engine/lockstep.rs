//! Lockstep rounds: every message sent in round `r` is delivered at the start
//! of round `r + 1`, and each node with something to do in a round is
//! invoked exactly once with everything addressed to it.

use std::collections::BTreeMap;

use crate::adversary::{HistoryDigest, WakeSchedule};
use crate::engine::{EngineStats, MessageCounts, RunConfig, SimError};
use crate::message::Message;
use crate::protocol::Ticket;
use crate::rng::{NodeStreams, StreamRng};
use crate::time::VirtualTime;
use crate::trace::{EventKind, Note, TraceOutput, TraceRecord};
use crate::NodeId;

/// Everything a node receives in one round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundInput {
    /// The adversary wakes this (still asleep) node this round.
    pub spontaneous: bool,
    /// A timer the node set for this round fired.
    pub timer: bool,
    /// Delivered messages in send order; `from == node` for local ones.
    pub messages: Vec<(NodeId, Message)>,
}

pub trait LockstepProtocol {
    fn on_round(&mut self, node: NodeId, round: u64, input: RoundInput, net: &mut RoundNet) -> Result<(), SimError>;
}

struct Outgoing {
    from: NodeId,
    to: NodeId,
    seq: u64,
    msg: Message,
}

/// The lockstep engine as seen from inside a handler.
pub struct RoundNet {
    n: usize,
    round: u64,
    next_seq: u64,
    streams: NodeStreams,
    outbox: Vec<Outgoing>,
    timers: BTreeMap<u64, Vec<(NodeId, u64)>>,
    awake: Vec<bool>,
    history: HistoryDigest,
    counts: MessageCounts,
    notes: Vec<Note>,
}

impl RoundNet {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        RoundNet {
            n,
            round: 0,
            next_seq: 0,
            streams: NodeStreams::new(seed, n),
            outbox: Vec::new(),
            timers: BTreeMap::new(),
            awake: vec![false; n],
            history: HistoryDigest::default(),
            counts: MessageCounts::default(),
            notes: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn rng(&mut self, node: NodeId) -> &mut StreamRng {
        self.streams.get(node)
    }

    pub fn counts(&self) -> &MessageCounts {
        &self.counts
    }

    pub fn note(&mut self, note: Note) {
        self.notes.push(note);
    }

    pub fn reveal_candidate(&mut self, node: NodeId, ticket: Ticket) {
        self.history.candidate_revealed(node, ticket);
    }

    pub fn reveal_retired(&mut self, node: NodeId) {
        self.history.candidate_retired(node);
    }

    pub fn sample_targets(&mut self, node: NodeId, count: usize) -> Result<Vec<NodeId>, SimError> {
        let n = self.n;
        Ok(crate::adversary::sample_targets(node, count, n, self.streams.get(node))?)
    }

    #[cfg(test)]
    pub(crate) fn set_awake(&mut self, node: NodeId) {
        self.awake[node.index()] = true;
    }

    /// Drains queued sends as (from, to, message).
    #[cfg(test)]
    pub(crate) fn take_outbox(&mut self) -> Vec<(NodeId, NodeId, Message)> {
        std::mem::take(&mut self.outbox).into_iter().map(|m| (m.from, m.to, m.msg)).collect()
    }

    #[cfg(test)]
    pub(crate) fn set_round(&mut self, round: u64) {
        self.round = round;
    }

    #[cfg(test)]
    pub(crate) fn pending_timers(&self) -> Vec<(u64, NodeId)> {
        self.timers.iter().flat_map(|(&r, v)| v.iter().map(move |&(n, _)| (r, n))).collect()
    }

    fn take_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    /// Queues `msg` for delivery next round. Self-addressed messages are
    /// local and not counted as network messages.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: Message) -> Result<(), SimError> {
        if to.index() >= self.n {
            return Err(SimError::UnknownNode(to));
        }
        if !self.awake[from.index()] {
            return Err(SimError::SenderAsleep(from));
        }
        if from == to {
            self.counts.local += 1;
        } else {
            self.counts.add_remote(&msg);
            self.history.sends += 1;
        }
        let seq = self.take_seq();
        self.outbox.push(Outgoing { from, to, seq, msg });
        Ok(())
    }

    /// Invokes `node` again at `round`, which must lie in the future.
    pub fn set_timer(&mut self, node: NodeId, round: u64) -> Result<(), SimError> {
        if round <= self.round {
            return Err(SimError::TimerInPast { at: round, now: self.round });
        }
        let seq = self.take_seq();
        self.timers.entry(round).or_default().push((node, seq));
        Ok(())
    }
}

/// The round in which a wake-up at virtual time `t` happens.
pub fn wake_round(t: VirtualTime) -> u64 {
    t.whole_units()
}

#[derive(Default)]
struct Pending {
    wake_seq: Option<u64>,
    ignored_wake_seq: Option<u64>,
    timer_seq: Option<u64>,
    messages: Vec<(u64, NodeId, Message)>,
}

/// Runs `protocol` in lockstep rounds until no messages, timers or wake-ups
/// remain. Wake-ups at time `t` happen in round `⌊t⌋`.
pub fn run_lockstep<P: LockstepProtocol>(
    protocol: &mut P,
    wake: &WakeSchedule,
    config: &RunConfig,
    trace: &mut TraceOutput<'_>,
) -> Result<EngineStats, SimError> {
    let mut net = RoundNet::new(config.n, config.seed);
    let mut wakes: BTreeMap<u64, Vec<(NodeId, u64)>> = BTreeMap::new();
    for &(node, t) in wake.entries() {
        if node.index() >= config.n {
            return Err(SimError::UnknownNode(node));
        }
        let seq = net.take_seq();
        wakes.entry(wake_round(t)).or_default().push((node, seq));
    }
    let first_round = wake_round(wake.first_time());
    let mut round = first_round;
    let mut last_activity = first_round;
    let mut last_delivery: Option<u64> = None;
    let mut events = 0u64;
    let mut nonterminating = false;

    'rounds: loop {
        net.round = round;
        let mut pending: BTreeMap<NodeId, Pending> = BTreeMap::new();
        for m in std::mem::take(&mut net.outbox) {
            pending.entry(m.to).or_default().messages.push((m.seq, m.from, m.msg));
        }
        if let Some(list) = wakes.remove(&round) {
            for (node, seq) in list {
                let p = pending.entry(node).or_default();
                if net.awake[node.index()] {
                    p.ignored_wake_seq = Some(seq);
                } else {
                    p.wake_seq = Some(seq);
                }
            }
        }
        if let Some(list) = net.timers.remove(&round) {
            for (node, seq) in list {
                pending.entry(node).or_default().timer_seq = Some(seq);
            }
        }

        for (node, mut p) in pending {
            let mut records = Vec::with_capacity(p.messages.len() + 2);
            let base = |kind, seq| TraceRecord {
                t: VirtualTime::from_units(round),
                seq,
                kind,
                from: None,
                to: node.0,
                sent: None,
                round: Some(round),
                ignored: false,
                msg: None,
                notes: Vec::new(),
            };
            if let Some(seq) = p.ignored_wake_seq {
                records.push(TraceRecord { ignored: true, ..base(EventKind::Wakeup, seq) });
            }
            if let Some(seq) = p.wake_seq {
                records.push(base(EventKind::Wakeup, seq));
            }
            if let Some(seq) = p.timer_seq {
                records.push(base(EventKind::Timer, seq));
            }
            p.messages.sort_by_key(|m| m.0);
            for (seq, from, msg) in &p.messages {
                let kind = if *from == node { EventKind::LocalDeliver } else { EventKind::Deliver };
                records.push(TraceRecord {
                    from: Some(from.0),
                    sent: Some(VirtualTime::from_units(round - 1)),
                    msg: Some(msg.clone()),
                    ..base(kind, *seq)
                });
            }
            if events + records.len() as u64 > config.event_budget {
                nonterminating = true;
                break 'rounds;
            }
            events += records.len() as u64;

            let input = RoundInput {
                spontaneous: p.wake_seq.is_some(),
                timer: p.timer_seq.is_some(),
                messages: p.messages.into_iter().map(|(_, f, m)| (f, m)).collect(),
            };
            let active = input.spontaneous || input.timer || !input.messages.is_empty();
            if !input.messages.is_empty() {
                net.history.deliveries += input.messages.len() as u64;
                last_delivery = Some(round);
            }
            if input.spontaneous {
                net.history.wakes.push((node, VirtualTime::from_units(round)));
            }
            if active {
                last_activity = round;
                let wakes_now = input.spontaneous || !input.messages.is_empty();
                if wakes_now {
                    net.awake[node.index()] = true;
                }
                protocol.on_round(node, round, input, &mut net)?;
            }
            if let Some(last) = records.last_mut() {
                last.notes = std::mem::take(&mut net.notes);
            }
            for r in &records {
                trace.record(r)?;
            }
        }

        round = if !net.outbox.is_empty() {
            round + 1
        } else {
            let next_timer = net.timers.keys().next().copied();
            let next_wake = wakes.keys().next().copied();
            match (next_timer, next_wake) {
                (None, None) => break,
                (a, b) => a.into_iter().chain(b).min().expect("one is set"),
            }
        };
    }

    Ok(EngineStats {
        counts: net.counts,
        events,
        first_wake: VirtualTime::from_units(first_round),
        last_event: VirtualTime::from_units(last_activity),
        nonterminating,
        fifo_clamps: 0,
        first_wake_round: Some(first_round),
        last_delivery_round: last_delivery,
    })
}
