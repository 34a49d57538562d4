//! Event traces: the JSON-lines record format, the FNV-1a trace hash and the
//! sinks that consume records as the engine produces them.

use std::hash::Hasher;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::message::Message;
use crate::protocol::{CandState, ProtocolKind, RefereeState, SyncRole};
use crate::time::VirtualTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Wakeup,
    Deliver,
    LocalDeliver,
    /// Lockstep only: a node's own scheduled activation attempt.
    Timer,
}

/// State changes reported by protocol handlers, attached to the record of the
/// event whose handler made them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all_fields = "camelCase")]
pub enum Note {
    /// Referee state change; `via` is the candidate the change concerns.
    Referee {
        node: u32,
        from: RefereeState,
        to: RefereeState,
        via: u32,
    },
    /// Candidate state change. `at_seq` is the engine's next sequence number
    /// when the change happened: anything the node schedules later has a
    /// sequence number of at least `at_seq`.
    Candidate {
        node: u32,
        from: CandState,
        to: CandState,
        at_seq: u64,
    },
    PhaseStart {
        node: u32,
        phase: u32,
    },
    PhaseEnd {
        node: u32,
        phase: u32,
    },
    Terminated {
        node: u32,
    },
    Role {
        node: u32,
        from: SyncRole,
        to: SyncRole,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceRecord {
    pub t: VirtualTime,
    pub seq: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<u32>,
    pub to: u32,
    /// Send time of a delivered message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent: Option<VirtualTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u64>,
    /// A wake-up aimed at a node that was already awake.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ignored: bool,
    #[serde(flatten)]
    pub msg: Option<Message>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<Note>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeaderTag {
    Header,
}

/// First line of every trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceHeader {
    pub kind: HeaderTag,
    pub protocol: ProtocolKind,
    pub n: usize,
    pub seed: u64,
    pub unique_ids: bool,
    pub adversary: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
pub enum TraceLine {
    Header(TraceHeader),
    Event(TraceRecord),
}

/// 64-bit FNV-1a.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv1a(Self::OFFSET)
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }
}

/// Consumer of trace records. `line` is the canonical serialization of
/// `record` including the trailing newline.
pub trait TraceSink {
    fn header(&mut self, _header: &TraceHeader, _line: &[u8]) -> io::Result<()> {
        Ok(())
    }

    fn record(&mut self, record: &TraceRecord, line: &[u8]) -> io::Result<()>;
}

/// Writes the trace as JSON lines.
pub struct JsonlWriter<W: Write> {
    out: W,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(out: W) -> Self {
        JsonlWriter { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TraceSink for JsonlWriter<W> {
    fn header(&mut self, _header: &TraceHeader, line: &[u8]) -> io::Result<()> {
        self.out.write_all(line)
    }

    fn record(&mut self, _record: &TraceRecord, line: &[u8]) -> io::Result<()> {
        self.out.write_all(line)
    }
}

/// Keeps every record in memory.
#[derive(Default)]
pub struct RecordBuffer {
    pub header: Option<TraceHeader>,
    pub records: Vec<TraceRecord>,
}

impl TraceSink for RecordBuffer {
    fn header(&mut self, header: &TraceHeader, _line: &[u8]) -> io::Result<()> {
        self.header = Some(header.clone());
        Ok(())
    }

    fn record(&mut self, record: &TraceRecord, _line: &[u8]) -> io::Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Writes the canonical JSON form of `r` (the same bytes `serde_json`
/// produces for it) without the trailing newline. This is the hot path of
/// every run, hence hand-rolled.
pub fn encode_record(buf: &mut Vec<u8>, r: &TraceRecord) {
    let mut e = Encoder { buf, first: true };
    e.open();
    e.time("t", r.t);
    e.uint("seq", r.seq);
    e.raw_str(
        "kind",
        match r.kind {
            EventKind::Wakeup => "Wakeup",
            EventKind::Deliver => "Deliver",
            EventKind::LocalDeliver => "LocalDeliver",
            EventKind::Timer => "Timer",
        },
    );
    if let Some(from) = r.from {
        e.uint("from", from as u64);
    }
    e.uint("to", r.to as u64);
    if let Some(sent) = r.sent {
        e.time("sent", sent);
    }
    if let Some(round) = r.round {
        e.uint("round", round);
    }
    if r.ignored {
        e.key("ignored");
        e.buf.extend_from_slice(b"true");
    }
    if let Some(msg) = &r.msg {
        e.raw_str("msgType", msg.tag());
        e.key("msgFields");
        encode_fields(e.buf, msg);
    }
    if !r.notes.is_empty() {
        e.key("notes");
        e.buf.push(b'[');
        for (i, note) in r.notes.iter().enumerate() {
            if i > 0 {
                e.buf.push(b',');
            }
            encode_note(e.buf, note);
        }
        e.buf.push(b']');
    }
    e.close();
}

fn encode_fields(buf: &mut Vec<u8>, msg: &Message) {
    let mut e = Encoder { buf, first: true };
    e.open();
    match *msg {
        Message::Request(p) | Message::Approved(p) | Message::Declined(p) | Message::Decide(p) => {
            e.position(&p);
        }
        Message::DecideReply { contender, chosen } => {
            for (name, v) in [("contender", contender), ("chosen", chosen)] {
                e.key(name);
                let mut inner = Encoder { buf: e.buf, first: true };
                inner.open();
                inner.position(&v.pos);
                inner.raw_str(
                    "result",
                    match v.result {
                        crate::message::Outcome::Wins => "wins",
                        crate::message::Outcome::Loses => "loses",
                    },
                );
                inner.close();
            }
        }
        Message::Leader { rank, phase, id } => {
            e.uint("rank", rank);
            e.uint("phase", phase as u64);
            if let Some(id) = id {
                e.uint("id", id as u64);
            }
        }
        Message::SyncRequest(t) | Message::SyncReply(t) | Message::Winner(t) => {
            e.uint("rank", t.rank);
            if let Some(id) = t.id {
                e.uint("id", id as u64);
            }
        }
    }
    e.close();
}

fn encode_note(buf: &mut Vec<u8>, note: &Note) {
    let mut e = Encoder { buf, first: true };
    e.open();
    match *note {
        Note::Referee { node, from, to, via } => {
            e.raw_str("note", "Referee");
            e.uint("node", node as u64);
            e.raw_str("from", referee_name(from));
            e.raw_str("to", referee_name(to));
            e.uint("via", via as u64);
        }
        Note::Candidate { node, from, to, at_seq } => {
            e.raw_str("note", "Candidate");
            e.uint("node", node as u64);
            e.raw_str("from", cand_name(from));
            e.raw_str("to", cand_name(to));
            e.uint("atSeq", at_seq);
        }
        Note::PhaseStart { node, phase } | Note::PhaseEnd { node, phase } => {
            e.raw_str("note", if matches!(note, Note::PhaseStart { .. }) { "PhaseStart" } else { "PhaseEnd" });
            e.uint("node", node as u64);
            e.uint("phase", phase as u64);
        }
        Note::Terminated { node } => {
            e.raw_str("note", "Terminated");
            e.uint("node", node as u64);
        }
        Note::Role { node, from, to } => {
            e.raw_str("note", "Role");
            e.uint("node", node as u64);
            e.raw_str("from", role_name(from));
            e.raw_str("to", role_name(to));
        }
    }
    e.close();
}

fn referee_name(s: RefereeState) -> &'static str {
    match s {
        RefereeState::C0 => "C0",
        RefereeState::C1 => "C1",
        RefereeState::C2 => "C2",
        RefereeState::C3 => "C3",
    }
}

fn cand_name(s: CandState) -> &'static str {
    match s {
        CandState::Candidate => "Candidate",
        CandState::NonElected => "NonElected",
        CandState::Elected => "Elected",
    }
}

fn role_name(s: SyncRole) -> &'static str {
    match s {
        SyncRole::Asleep => "Asleep",
        SyncRole::Silent => "Silent",
        SyncRole::Active => "Active",
        SyncRole::Referee => "Referee",
        SyncRole::Done => "Done",
    }
}

/// Writes `t` in units exactly as `serde_json` writes the `f64`. From 0.1 up
/// to 10⁹ units the value has at most 15 significant digits, so its shortest
/// round-trip form is the plain decimal with trailing zeros trimmed.
fn write_time(buf: &mut Vec<u8>, t: VirtualTime) {
    use crate::time::TICKS_PER_UNIT;
    let ticks = t.ticks();
    if !(TICKS_PER_UNIT / 10..1_000_000_000 * TICKS_PER_UNIT).contains(&ticks) {
        buf.extend_from_slice(ryu::Buffer::new().format_finite(t.as_f64()).as_bytes());
        return;
    }
    buf.extend_from_slice(itoa::Buffer::new().format(ticks / TICKS_PER_UNIT).as_bytes());
    buf.push(b'.');
    let mut frac = ticks % TICKS_PER_UNIT;
    if frac == 0 {
        buf.push(b'0');
        return;
    }
    let mut width = 6;
    while frac.is_multiple_of(10) {
        frac /= 10;
        width -= 1;
    }
    let digits = itoa::Buffer::new().format(frac).len();
    buf.extend(std::iter::repeat_n(b'0', width - digits));
    buf.extend_from_slice(itoa::Buffer::new().format(frac).as_bytes());
}

/// Object writer for keys and values that never need escaping.
struct Encoder<'b> {
    buf: &'b mut Vec<u8>,
    first: bool,
}

impl Encoder<'_> {
    fn open(&mut self) {
        self.buf.push(b'{');
    }

    fn close(&mut self) {
        self.buf.push(b'}');
    }

    fn key(&mut self, k: &str) {
        if !self.first {
            self.buf.push(b',');
        }
        self.first = false;
        self.buf.push(b'"');
        self.buf.extend_from_slice(k.as_bytes());
        self.buf.extend_from_slice(b"\":");
    }

    fn uint(&mut self, k: &str, v: u64) {
        self.key(k);
        self.buf.extend_from_slice(itoa::Buffer::new().format(v).as_bytes());
    }

    fn time(&mut self, k: &str, t: VirtualTime) {
        self.key(k);
        write_time(self.buf, t);
    }

    fn raw_str(&mut self, k: &str, v: &str) {
        self.key(k);
        self.buf.push(b'"');
        self.buf.extend_from_slice(v.as_bytes());
        self.buf.push(b'"');
    }

    fn position(&mut self, p: &crate::protocol::Position) {
        self.uint("rank", p.rank);
        self.uint("phase", p.phase as u64);
        if let Some(id) = p.tiebreak {
            self.uint("id", id as u64);
        }
    }
}

/// Serializes records canonically, folds them into the trace hash and fans
/// them out to the attached sinks.
pub struct TraceOutput<'a> {
    hasher: Fnv1a,
    buf: Vec<u8>,
    sinks: Vec<&'a mut dyn TraceSink>,
}

impl<'a> TraceOutput<'a> {
    pub fn new(sinks: Vec<&'a mut dyn TraceSink>) -> Self {
        TraceOutput { hasher: Fnv1a::new(), buf: Vec::with_capacity(256), sinks }
    }

    pub fn header(&mut self, header: &TraceHeader) -> io::Result<()> {
        self.buf.clear();
        serde_json::to_writer(&mut self.buf, header).map_err(io::Error::other)?;
        self.buf.push(b'\n');
        self.hasher.write(&self.buf);
        for sink in self.sinks.iter_mut() {
            sink.header(header, &self.buf)?;
        }
        Ok(())
    }

    pub fn record(&mut self, record: &TraceRecord) -> io::Result<()> {
        self.buf.clear();
        encode_record(&mut self.buf, record);
        self.buf.push(b'\n');
        self.hasher.write(&self.buf);
        for sink in self.sinks.iter_mut() {
            sink.record(record, &self.buf)?;
        }
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        self.hasher.finish()
    }
}
