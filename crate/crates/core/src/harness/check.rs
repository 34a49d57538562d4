//! Trace invariant checking.
//!
//! [`TraceChecker`] consumes records in trace order, either live as a
//! [`TraceSink`] during a run or replayed from a JSON-lines file by
//! [`verify_trace`]. Violations are collected, never fatal.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::Message;
use crate::protocol::{CandState, ProtocolKind, RefereeState, SyncRole};
use crate::time::VirtualTime;
use crate::trace::{EventKind, Note, TraceHeader, TraceLine, TraceRecord, TraceSink};

/// Longest a single candidate phase may take, in time units.
pub const PHASE_LATENCY_BOUND: u64 = 8;

/// Rounds after the first wake-up within which every lockstep delivery lands.
pub const SYNC_ROUND_BOUND: u64 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    TimeOrder,
    Fifo,
    DelayBound,
    RefereeTransition,
    CandidateTransition,
    Retirement,
    ReplyConservation,
    MultipleElected,
    Disagreement,
    PhaseLatency,
    RoundBound,
    RoleTransition,
    CountMismatch,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Sequence number of the offending record, if there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.seq {
            Some(seq) => write!(f, "seq {seq}: {}: {}", self.kind, self.detail),
            None => write!(f, "end of trace: {}: {}", self.kind, self.detail),
        }
    }
}

/// (requester, referee, rank, phase)
type RequestKey = (u32, u32, u64, u32);

pub struct TraceChecker {
    protocol: ProtocolKind,
    unique_ids: bool,
    violations: Vec<Violation>,
    last: Option<(VirtualTime, u64)>,
    sync_seqs: HashSet<u64>,
    // per directed edge: (last delivered seq, last delivery time)
    edges: HashMap<(u32, u32), (u64, VirtualTime)>,
    deliveries: u64,
    first_wake_round: Option<u64>,

    referee: HashMap<u32, RefereeState>,
    contender: HashMap<u32, RequestKey>,
    cand: HashMap<u32, CandState>,
    retired_at: HashMap<u32, u64>,
    elected: Vec<u32>,
    terminated: HashSet<u32>,
    outstanding: HashMap<RequestKey, u32>,
    phase_open: HashMap<u32, (u32, VirtualTime)>,
    leader_rank: Option<(u64, Option<u32>)>,

    roles: HashMap<u32, SyncRole>,
}

impl TraceChecker {
    pub fn new(protocol: ProtocolKind, unique_ids: bool) -> Self {
        TraceChecker {
            protocol,
            unique_ids,
            violations: Vec::new(),
            last: None,
            sync_seqs: HashSet::default(),
            edges: HashMap::default(),
            deliveries: 0,
            first_wake_round: None,
            referee: HashMap::default(),
            contender: HashMap::default(),
            cand: HashMap::default(),
            retired_at: HashMap::default(),
            elected: Vec::new(),
            terminated: HashSet::default(),
            outstanding: HashMap::default(),
            phase_open: HashMap::default(),
            leader_rank: None,
            roles: HashMap::default(),
        }
    }

    pub fn for_header(header: &TraceHeader) -> Self {
        Self::new(header.protocol, header.unique_ids)
    }

    /// Remote deliveries seen so far.
    pub fn deliveries(&self) -> u64 {
        self.deliveries
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    fn flag(&mut self, kind: ViolationKind, seq: Option<u64>, detail: String) {
        self.violations.push(Violation { kind, seq, detail });
    }

    pub fn check(&mut self, r: &TraceRecord) {
        let seq = Some(r.seq);
        self.check_order(r);
        if r.kind == EventKind::Wakeup && !r.ignored && self.first_wake_round.is_none() {
            self.first_wake_round = Some(r.t.whole_units());
        }
        if matches!(r.kind, EventKind::Deliver | EventKind::LocalDeliver) {
            self.check_delivery(r);
        }
        if self.protocol == ProtocolKind::Async {
            if let (Some(from), Some(msg)) = (r.from, &r.msg) {
                self.check_async_message(r, from, msg);
            }
        }
        for note in &r.notes {
            self.check_note(r, note);
        }
        if self.protocol == ProtocolKind::Sync && r.msg.is_some() {
            let first = self.first_wake_round.unwrap_or(0);
            let round = r.round.unwrap_or_else(|| r.t.whole_units());
            if round > first + SYNC_ROUND_BOUND {
                self.flag(
                    ViolationKind::RoundBound,
                    seq,
                    format!("delivery in round {round}, first wake-up in round {first}"),
                );
            }
        }
    }

    fn check_order(&mut self, r: &TraceRecord) {
        let seq = Some(r.seq);
        match self.protocol {
            ProtocolKind::Async => {
                if let Some((t, s)) = self.last {
                    if (r.t, r.seq) <= (t, s) {
                        self.flag(
                            ViolationKind::TimeOrder,
                            seq,
                            format!("event ({}, {}) follows ({t}, {s})", r.t, r.seq),
                        );
                    }
                }
            }
            ProtocolKind::Sync => {
                if let Some((t, _)) = self.last {
                    if r.t < t {
                        self.flag(ViolationKind::TimeOrder, seq, format!("round time {} follows {t}", r.t));
                    }
                }
                if !self.sync_seqs.insert(r.seq) {
                    self.flag(ViolationKind::TimeOrder, seq, "sequence number reused".into());
                }
                if let Some(round) = r.round {
                    if VirtualTime::from_units(round) != r.t {
                        self.flag(ViolationKind::TimeOrder, seq, format!("round {round} recorded at t = {}", r.t));
                    }
                }
            }
        }
        self.last = Some((r.t, r.seq));
    }

    fn check_delivery(&mut self, r: &TraceRecord) {
        let seq = Some(r.seq);
        let Some(from) = r.from else {
            self.flag(ViolationKind::DelayBound, seq, "delivery without a sender".into());
            return;
        };
        let sent = r.sent.unwrap_or(r.t);
        if sent > r.t {
            self.flag(ViolationKind::DelayBound, seq, format!("delivered at {} before it was sent at {sent}", r.t));
            return;
        }
        if r.kind == EventKind::LocalDeliver {
            let expected = match self.protocol {
                ProtocolKind::Async => sent,
                ProtocolKind::Sync => sent + VirtualTime::UNIT,
            };
            if from != r.to || r.t != expected {
                self.flag(ViolationKind::DelayBound, seq, format!("local delivery {from}->{} at {}", r.to, r.t));
            }
            return;
        }
        self.deliveries += 1;
        let edge = (from, r.to);
        let prev = self.edges.get(&edge).copied();
        if let Some((last_seq, _)) = prev {
            if r.seq < last_seq {
                self.flag(
                    ViolationKind::Fifo,
                    seq,
                    format!("{from}->{} delivers seq {} after seq {last_seq}", r.to, r.seq),
                );
            }
        }
        let delay = r.t - sent;
        let ok = match self.protocol {
            ProtocolKind::Async => {
                delay > VirtualTime::ZERO && (delay <= VirtualTime::UNIT || prev.is_some_and(|(_, t)| t == r.t))
            }
            ProtocolKind::Sync => delay == VirtualTime::UNIT,
        };
        if !ok {
            self.flag(ViolationKind::DelayBound, seq, format!("{from}->{} took {delay}", r.to));
        }
        let last_seq = prev.map_or(r.seq, |(s, _)| s.max(r.seq));
        self.edges.insert(edge, (last_seq, r.t));
    }

    fn check_async_message(&mut self, r: &TraceRecord, from: u32, msg: &Message) {
        let seq = Some(r.seq);
        let to = r.to;
        match msg {
            Message::Request(pos) => {
                if let Some(&at) = self.retired_at.get(&from) {
                    if r.seq >= at {
                        self.flag(
                            ViolationKind::Retirement,
                            seq,
                            format!("node {from} sent a request after retiring at seq {at}"),
                        );
                    }
                }
                if !self.terminated.contains(&to) {
                    *self.outstanding.entry((from, to, pos.rank, pos.phase)).or_default() += 1;
                }
            }
            Message::Approved(pos) | Message::Declined(pos) => {
                let key = (to, from, pos.rank, pos.phase);
                match self.outstanding.get_mut(&key) {
                    Some(c) if *c > 0 => *c -= 1,
                    _ => self.flag(
                        ViolationKind::ReplyConservation,
                        seq,
                        format!("{} from {from} to {to} answers no outstanding request", msg.tag()),
                    ),
                }
            }
            Message::Leader { rank, id, .. } => {
                let t = (*rank, *id);
                match self.leader_rank {
                    None => self.leader_rank = Some(t),
                    Some(prev) if prev != t && self.unique_ids => self.flag(
                        ViolationKind::Disagreement,
                        seq,
                        format!("leader announced as {rank} after {}", prev.0),
                    ),
                    Some(_) => {}
                }
            }
            _ => {}
        }
    }

    fn check_note(&mut self, r: &TraceRecord, note: &Note) {
        let seq = Some(r.seq);
        match *note {
            Note::Referee { node, from, to, via } => {
                let current = self.referee.get(&node).copied().unwrap_or(RefereeState::C0);
                if current != from {
                    self.flag(
                        ViolationKind::RefereeTransition,
                        seq,
                        format!("referee {node} reports {from:?}->{to:?} while in {current:?}"),
                    );
                }
                if !from.is_legal_transition(to) {
                    self.flag(
                        ViolationKind::RefereeTransition,
                        seq,
                        format!("referee {node}: illegal {from:?}->{to:?}"),
                    );
                }
                self.referee.insert(node, to);
                match to {
                    RefereeState::C1 | RefereeState::C0 => {
                        self.contender.remove(&node);
                    }
                    RefereeState::C2 | RefereeState::C3 => {
                        if let (Some(Message::Request(pos)), Some(sender)) = (&r.msg, r.from) {
                            if sender == via {
                                self.contender.insert(node, (via, node, pos.rank, pos.phase));
                            }
                        }
                    }
                }
            }
            Note::Candidate { node, from, to, at_seq } => {
                if let Some(&current) = self.cand.get(&node) {
                    if current != from {
                        self.flag(
                            ViolationKind::CandidateTransition,
                            seq,
                            format!("node {node} reports {from:?}->{to:?} while {current:?}"),
                        );
                    }
                }
                if from != CandState::Candidate {
                    self.flag(
                        ViolationKind::CandidateTransition,
                        seq,
                        format!("node {node} left absorbing state {from:?}"),
                    );
                }
                self.cand.insert(node, to);
                if to != CandState::Candidate {
                    self.retired_at.entry(node).or_insert(at_seq);
                }
                if to == CandState::Elected {
                    self.elected.push(node);
                    if self.elected.len() > 1 && self.unique_ids {
                        self.flag(
                            ViolationKind::MultipleElected,
                            seq,
                            format!("nodes {:?} all entered Elected", self.elected),
                        );
                    }
                }
            }
            Note::PhaseStart { node, phase } => {
                self.phase_open.insert(node, (phase, r.t));
            }
            Note::PhaseEnd { node, phase } => match self.phase_open.remove(&node) {
                Some((p, start)) if p == phase => {
                    let span = r.t - start;
                    if span > VirtualTime::from_units(PHASE_LATENCY_BOUND) {
                        self.flag(
                            ViolationKind::PhaseLatency,
                            seq,
                            format!("node {node} spent {span} in phase {phase}"),
                        );
                    }
                }
                _ => self.flag(
                    ViolationKind::CandidateTransition,
                    seq,
                    format!("node {node} ended phase {phase} it never started"),
                ),
            },
            Note::Terminated { node } => {
                self.terminated.insert(node);
            }
            Note::Role { node, from, to } => {
                let current = self.roles.get(&node).copied().unwrap_or(SyncRole::Asleep);
                if current != from || !from.is_legal_transition(to) {
                    self.flag(
                        ViolationKind::RoleTransition,
                        seq,
                        format!("node {node}: {from:?}->{to:?} while {current:?}"),
                    );
                }
                self.roles.insert(node, to);
            }
        }
    }

    /// End-of-trace checks. `complete` is false when the run was cut off by
    /// its event budget, in which case unanswered requests are expected.
    pub fn finish(mut self, complete: bool) -> Vec<Violation> {
        if complete && self.protocol == ProtocolKind::Async {
            let mut open: Vec<_> = self.outstanding.iter().filter(|(_, &c)| c > 0).map(|(k, &c)| (*k, c)).collect();
            open.sort_unstable();
            for ((u, v, rank, phase), count) in open {
                // a referee that terminated mid-dispute never answers its contender
                let excused =
                    count == 1 && self.terminated.contains(&v) && self.contender.get(&v) == Some(&(u, v, rank, phase));
                if !excused {
                    self.flag(
                        ViolationKind::ReplyConservation,
                        None,
                        format!("request from {u} to {v} (rank {rank}, phase {phase}) never answered"),
                    );
                }
            }
        }
        self.violations
    }
}

impl TraceSink for TraceChecker {
    fn record(&mut self, record: &TraceRecord, _line: &[u8]) -> io::Result<()> {
        self.check(record);
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: trace does not start with a header line")]
    MissingHeader { path: PathBuf },
}

/// Result of replaying a trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub header: TraceHeader,
    pub records: u64,
    pub hash: u64,
    pub violations: Vec<Violation>,
}

/// Replays the JSON-lines trace at `path` and checks every invariant.
pub fn verify_trace(path: &Path) -> Result<VerifyReport, VerifyError> {
    let io_err = |source| VerifyError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    verify_reader(BufReader::new(file), path)
}

/// Like [`verify_trace`], reading from any buffered source; `path` is used
/// in error messages only.
pub fn verify_reader<R: BufRead>(mut reader: R, path: &Path) -> Result<VerifyReport, VerifyError> {
    use std::hash::Hasher;

    let mut hasher = crate::trace::Fnv1a::new();
    let mut line = String::new();
    let mut line_no = 0usize;
    let mut header: Option<TraceHeader> = None;
    let mut checker: Option<TraceChecker> = None;
    let mut records = 0u64;
    loop {
        line.clear();
        let read =
            reader.read_line(&mut line).map_err(|source| VerifyError::Io { path: path.to_path_buf(), source })?;
        if read == 0 {
            break;
        }
        line_no += 1;
        hasher.write(line.as_bytes());
        let text = line.trim_end_matches(['\n', '\r']);
        if text.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(text).map_err(|e| VerifyError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            column: e.column(),
            message: e.to_string(),
        })?;
        match (parsed, &mut checker) {
            (TraceLine::Header(h), None) => {
                checker = Some(TraceChecker::for_header(&h));
                header = Some(h);
            }
            (TraceLine::Header(_), Some(_)) => {
                return Err(VerifyError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    column: 1,
                    message: "second header line".into(),
                })
            }
            (TraceLine::Event(_), None) => return Err(VerifyError::MissingHeader { path: path.to_path_buf() }),
            (TraceLine::Event(r), Some(c)) => {
                c.check(&r);
                records += 1;
            }
        }
    }
    let (Some(header), Some(checker)) = (header, checker) else {
        return Err(VerifyError::MissingHeader { path: path.to_path_buf() });
    };
    Ok(VerifyReport { header, records, hash: hasher.finish(), violations: checker.finish(true) })
}
