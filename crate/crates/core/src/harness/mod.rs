//! Trials, sweeps and trace verification.

mod check;
mod config;
mod sweep;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{
    verify_reader, verify_trace, TraceChecker, VerifyError, VerifyReport, Violation, ViolationKind,
    PHASE_LATENCY_BOUND, SYNC_ROUND_BOUND,
};
pub use config::{parse_json, ConfigError};
pub use sweep::{
    attrition_bound, attrition_check, attrition_check_through, percentile, run_sweep, run_sweep_reports, summarize,
    write_sweep, AttritionSummary, SweepRow, SweepSpec, SweepSummary, TrialRow,
};

use crate::adversary::{AdversaryConfig, AdversaryError};
use crate::engine::lockstep::run_lockstep;
use crate::engine::{run_async, EngineStats, RunConfig, SimError, DEFAULT_EVENT_BUDGET};
use crate::message::MessageClass;
use crate::protocol::{AsyncElection, ProtocolKind, SyncElection, Ticket};
use crate::rng::{derive_seed, stream, DOMAIN_ADVERSARY};
use crate::time::VirtualTime;
use crate::trace::{HeaderTag, JsonlWriter, TraceHeader, TraceOutput, TraceSink};
use crate::NodeId;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("adversary: {0}")]
    Adversary(#[from] AdversaryError),
    #[error("engine: {0}")]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid trial: {0}")]
    Invalid(String),
}

/// One trial: protocol, network size, trial seed and adversary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrialSpec {
    pub protocol: ProtocolKind,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub unique_ids: bool,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_budget: Option<u64>,
}

impl TrialSpec {
    /// Anonymous nodes, all woken at time zero, unit delays.
    pub fn new(protocol: ProtocolKind, n: usize, seed: u64) -> Self {
        TrialSpec { protocol, n, seed, unique_ids: false, adversary: AdversaryConfig::default(), event_budget: None }
    }

    pub fn with_adversary(mut self, adversary: AdversaryConfig) -> Self {
        self.adversary = adversary;
        self
    }

    pub fn with_unique_ids(mut self, unique_ids: bool) -> Self {
        self.unique_ids = unique_ids;
        self
    }

    fn header(&self) -> TraceHeader {
        TraceHeader {
            kind: HeaderTag::Header,
            protocol: self.protocol,
            n: self.n,
            seed: self.seed,
            unique_ids: self.unique_ids,
            adversary: self.adversary.label(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialOutcome {
    Success,
    MultiLeader,
    NoLeader,
    Nonterminating,
}

impl TrialOutcome {
    pub fn is_success(self) -> bool {
        self == TrialOutcome::Success
    }
}

impl fmt::Display for TrialOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialOutcome::Success => "success",
            TrialOutcome::MultiLeader => "multi-leader",
            TrialOutcome::NoLeader => "no-leader",
            TrialOutcome::Nonterminating => "nonterminating",
        })
    }
}

mod hex64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialReport {
    pub n: usize,
    pub seed: u64,
    pub protocol: ProtocolKind,
    pub unique_ids: bool,
    pub adversary: AdversaryConfig,
    /// Remote messages by wire tag.
    pub message_counts: BTreeMap<String, u64>,
    pub total_remote_messages: u64,
    pub local_messages: u64,
    /// From the first wake-up to the last event.
    pub elapsed_virtual_time: VirtualTime,
    /// Lockstep only: rounds from the first wake-up to the last delivery.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_activation_round: Option<u64>,
    /// Distinct leader ranks held by nodes at the end of the run.
    pub leader_ranks: Vec<u64>,
    /// Nodes that entered Elected (asynchronous) or broadcast WINNER (lockstep).
    pub elected_count: u64,
    pub agreement: bool,
    /// `perPhaseCandidateCounts[i]` = candidates that started phase `i`;
    /// index 0 is unused. Empty for the lockstep protocol.
    pub per_phase_candidate_counts: Vec<u64>,
    /// Asynchronous only: the longest candidate phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_phase_span: Option<VirtualTime>,
    pub events: u64,
    pub invariant_violations: Vec<Violation>,
    #[serde(with = "hex64")]
    pub trace_hash: u64,
    pub outcome: TrialOutcome,
}

impl TrialReport {
    pub fn class_count(&self, class: MessageClass) -> u64 {
        self.message_counts
            .iter()
            .filter(|(tag, _)| crate::message::class_of_tag(tag) == Some(class))
            .map(|(_, c)| c)
            .sum()
    }
}

/// Runs one trial with online invariant checking and no trace file.
pub fn run_trial(spec: &TrialSpec) -> Result<TrialReport, HarnessError> {
    run_trial_with(spec, Vec::new())
}

/// Runs one trial and writes its JSON-lines trace to `out`.
pub fn run_trial_traced<W: Write>(spec: &TrialSpec, out: W) -> Result<TrialReport, HarnessError> {
    let mut writer = JsonlWriter::new(io::BufWriter::new(out));
    let report = run_trial_with(spec, vec![&mut writer])?;
    writer.into_inner().flush().map_err(|source| HarnessError::Io { path: PathBuf::from("<trace>"), source })?;
    Ok(report)
}

/// Runs one trial, feeding the trace to `sinks` as well as the online checker.
pub fn run_trial_with(spec: &TrialSpec, sinks: Vec<&mut dyn TraceSink>) -> Result<TrialReport, HarnessError> {
    if spec.n == 0 {
        return Err(HarnessError::Invalid("n must be at least 1".into()));
    }
    if spec.n > u32::MAX as usize {
        return Err(HarnessError::Invalid(format!("n = {} is too large", spec.n)));
    }
    let n = spec.n;
    let adv_seed = derive_seed(&[DOMAIN_ADVERSARY, spec.adversary.adversary_seed, spec.seed]);
    let wake = spec.adversary.wake.schedule(n, &mut stream(derive_seed(&[adv_seed, 0])))?;
    let mut delay = spec.adversary.delay.build(stream(derive_seed(&[adv_seed, 1])))?;
    let config = RunConfig { n, seed: spec.seed, event_budget: spec.event_budget.unwrap_or(DEFAULT_EVENT_BUDGET) };

    let mut checker = TraceChecker::new(spec.protocol, spec.unique_ids);
    let header = spec.header();
    let io_err = |source| HarnessError::Io { path: PathBuf::from("<trace>"), source };

    let (stats, hash, summary) = {
        let mut all: Vec<&mut dyn TraceSink> = Vec::with_capacity(sinks.len() + 1);
        for s in sinks {
            all.push(s);
        }
        all.push(&mut checker);
        let mut trace = TraceOutput::new(all);
        trace.header(&header).map_err(io_err)?;
        let (stats, summary) = match spec.protocol {
            ProtocolKind::Async => {
                let mut p = AsyncElection::new(n, spec.unique_ids);
                let stats = run_async(&mut p, &wake, &mut delay, &config, &mut trace)?;
                (stats, summarize_async(&p, n))
            }
            ProtocolKind::Sync => {
                let mut p = SyncElection::new(n, spec.unique_ids);
                let stats = run_lockstep(&mut p, &wake, &config, &mut trace)?;
                (stats, summarize_sync(&p, n))
            }
        };
        (stats, trace.hash(), summary)
    };

    let deliveries = checker.deliveries();
    let mut violations = checker.finish(!stats.nonterminating);
    if !stats.nonterminating && deliveries != stats.counts.total_remote() {
        violations.push(Violation {
            kind: ViolationKind::CountMismatch,
            seq: None,
            detail: format!("{} remote messages sent, {deliveries} delivered", stats.counts.total_remote()),
        });
    }
    Ok(build_report(spec, stats, hash, summary, violations))
}

struct ProtocolSummary {
    leaders: Vec<Ticket>,
    elected: u64,
    agreement: bool,
    per_phase: Vec<u64>,
    max_phase_span: Option<VirtualTime>,
    first_activation: Option<u64>,
}

fn summarize_async(p: &AsyncElection, n: usize) -> ProtocolSummary {
    let m = p.metrics();
    let elected: Vec<Ticket> = m.elected.iter().map(|&v| p.ticket(v)).collect();
    let mut leaders: Vec<Ticket> = Vec::new();
    let mut agreement = true;
    for v in (0..n as u32).map(NodeId) {
        if !p.is_terminated(v) {
            continue;
        }
        match p.leader(v) {
            Some(l) => {
                if !leaders.contains(&l) {
                    leaders.push(l);
                }
                agreement &= elected.len() == 1 && elected[0] == l;
            }
            None => agreement = false,
        }
    }
    ProtocolSummary {
        leaders,
        elected: m.elected.len() as u64,
        agreement,
        per_phase: m.per_phase.clone(),
        max_phase_span: Some(m.max_phase_span),
        first_activation: None,
    }
}

fn summarize_sync(p: &SyncElection, n: usize) -> ProtocolSummary {
    use crate::protocol::SyncRole;
    let m = p.metrics();
    let mut leaders: Vec<Ticket> = Vec::new();
    let mut agreement = true;
    for v in (0..n as u32).map(NodeId) {
        if p.role(v) == SyncRole::Asleep {
            continue;
        }
        match p.leader(v) {
            Some(l) => {
                if !leaders.contains(&l) {
                    leaders.push(l);
                }
            }
            None => agreement = false,
        }
    }
    agreement &= leaders.len() == 1;
    ProtocolSummary {
        leaders,
        elected: m.winners.len() as u64,
        agreement,
        per_phase: Vec::new(),
        max_phase_span: None,
        first_activation: m.first_activation,
    }
}

fn build_report(
    spec: &TrialSpec,
    stats: EngineStats,
    trace_hash: u64,
    s: ProtocolSummary,
    violations: Vec<Violation>,
) -> TrialReport {
    let message_counts: BTreeMap<String, u64> = stats.counts.nonzero().map(|(tag, c)| (tag.to_string(), c)).collect();
    let outcome = if stats.nonterminating {
        TrialOutcome::Nonterminating
    } else if s.elected == 0 {
        TrialOutcome::NoLeader
    } else if s.elected > 1 || !s.agreement {
        TrialOutcome::MultiLeader
    } else {
        TrialOutcome::Success
    };
    let round_count = match spec.protocol {
        ProtocolKind::Sync => {
            Some(stats.last_delivery_round.zip(stats.first_wake_round).map_or(0, |(last, first)| last - first))
        }
        ProtocolKind::Async => None,
    };
    let elapsed = match round_count {
        Some(r) => VirtualTime::from_units(r),
        None => stats.elapsed(),
    };
    let mut leader_ranks: Vec<u64> = s.leaders.iter().map(|t| t.rank).collect();
    leader_ranks.sort_unstable();
    leader_ranks.dedup();
    TrialReport {
        n: spec.n,
        seed: spec.seed,
        protocol: spec.protocol,
        unique_ids: spec.unique_ids,
        adversary: spec.adversary.clone(),
        total_remote_messages: stats.counts.total_remote(),
        local_messages: stats.counts.local,
        message_counts,
        elapsed_virtual_time: elapsed,
        round_count,
        first_activation_round: s.first_activation,
        leader_ranks,
        elected_count: s.elected,
        agreement: s.agreement,
        per_phase_candidate_counts: s.per_phase,
        max_phase_span: s.max_phase_span,
        events: stats.events,
        invariant_violations: violations,
        trace_hash,
        outcome,
    }
}
