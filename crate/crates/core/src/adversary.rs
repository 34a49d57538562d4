//! The adversarial environment: who wakes up when, and how long each message
//! spends on its link.
//!
//! Delay policies may adapt to everything that has already happened in the
//! run (the [`HistoryDigest`]), including realized coin flips such as
//! candidate ranks, but never to samples a node has not drawn yet. Referee
//! selection is modeled as uniform sampling of neighbours: with an
//! obliviously fixed port numbering, a uniformly random port of a complete
//! graph is a uniformly random neighbour.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::Message;
use crate::protocol::Ticket;
use crate::rng::StreamRng;
use crate::time::{VirtualTime, TICKS_PER_UNIT};
use crate::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },
    #[error("invalid parameters for `{name}`: {reason}")]
    BadParams { name: String, reason: String },
    #[error("staggered wake of {k} nodes exceeds n = {n}")]
    TooManyWakes { k: usize, n: usize },
    #[error("epsilon {0} is outside (0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("wake schedule wakes no node")]
    EmptySchedule,
    #[error("wake schedule names node {node} more than once")]
    DuplicateWake { node: u32 },
    #[error("wake schedule names node {node} but n = {n}")]
    NodeOutOfRange { node: u32, n: usize },
    #[error("cannot sample {count} targets among {available} neighbours")]
    SampleCount { count: usize, available: usize },
}

/// A validated wake-up schedule: each node at most once, at least one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WakeSchedule {
    entries: Vec<(NodeId, VirtualTime)>,
    dormant: Vec<NodeId>,
}

impl WakeSchedule {
    pub fn new(n: usize, mut entries: Vec<(NodeId, VirtualTime)>) -> Result<Self, AdversaryError> {
        if entries.is_empty() {
            return Err(AdversaryError::EmptySchedule);
        }
        let mut seen = vec![false; n];
        for &(node, _) in &entries {
            if node.index() >= n {
                return Err(AdversaryError::NodeOutOfRange { node: node.0, n });
            }
            if std::mem::replace(&mut seen[node.index()], true) {
                return Err(AdversaryError::DuplicateWake { node: node.0 });
            }
        }
        entries.sort_by_key(|&(node, t)| (t, node));
        let dormant = (0..n as u32).map(NodeId).filter(|v| !seen[v.index()]).collect();
        Ok(WakeSchedule { entries, dormant })
    }

    /// Entries in (time, node) order.
    pub fn entries(&self) -> &[(NodeId, VirtualTime)] {
        &self.entries
    }

    /// Nodes never woken spontaneously.
    pub fn dormant(&self) -> &[NodeId] {
        &self.dormant
    }

    pub fn first_time(&self) -> VirtualTime {
        self.entries[0].1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WakeEntry {
    pub node: u32,
    pub time: f64,
}

/// A named wake schedule generator (or an explicit list).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WakeSpec {
    AllAtZero,
    Single,
    Staggered { k: usize, gap: f64 },
    RandomSubset { p: f64 },
    Explicit { entries: Vec<WakeEntry> },
}

impl WakeSpec {
    /// Builds the schedule for `n` nodes. `rng` is the adversary's stream and
    /// is only consumed by `random-subset`.
    pub fn schedule(&self, n: usize, rng: &mut StreamRng) -> Result<WakeSchedule, AdversaryError> {
        let entries = match *self {
            WakeSpec::AllAtZero => (0..n as u32).map(|v| (NodeId(v), VirtualTime::ZERO)).collect(),
            WakeSpec::Single => vec![(NodeId(0), VirtualTime::ZERO)],
            WakeSpec::Staggered { k, gap } => {
                if k > n {
                    return Err(AdversaryError::TooManyWakes { k, n });
                }
                let gap = VirtualTime::from_f64(gap).ok_or_else(|| AdversaryError::BadParams {
                    name: "staggered".into(),
                    reason: format!("gap {gap} must be a non-negative number"),
                })?;
                (0..k as u64).map(|i| (NodeId(i as u32), VirtualTime::from_ticks(gap.ticks() * i))).collect()
            }
            WakeSpec::RandomSubset { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(AdversaryError::BadParams {
                        name: "random-subset".into(),
                        reason: format!("probability {p} is outside [0, 1]"),
                    });
                }
                (0..n as u32).filter(|_| rng.random_bool(p)).map(|v| (NodeId(v), VirtualTime::ZERO)).collect()
            }
            WakeSpec::Explicit { ref entries } => entries
                .iter()
                .map(|e| {
                    VirtualTime::from_f64(e.time).map(|t| (NodeId(e.node), t)).ok_or_else(|| {
                        AdversaryError::BadParams {
                            name: "explicit".into(),
                            reason: format!("wake time {} for node {}", e.time, e.node),
                        }
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        WakeSchedule::new(n, entries)
    }
}

impl fmt::Display for WakeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WakeSpec::AllAtZero => f.write_str("all-at-zero"),
            WakeSpec::Single => f.write_str("single"),
            WakeSpec::Staggered { k, gap } => write!(f, "staggered:{k},{gap}"),
            WakeSpec::RandomSubset { p } => write!(f, "random-subset:{p}"),
            WakeSpec::Explicit { entries } => write!(f, "explicit:{}", entries.len()),
        }
    }
}

fn split_params(s: &str) -> (&str, Vec<&str>) {
    match s.split_once(':') {
        Some((name, params)) => (name.trim(), params.split(',').map(str::trim).collect()),
        None => (s.trim(), Vec::new()),
    }
}

fn parse_param<T: FromStr>(name: &str, raw: &str) -> Result<T, AdversaryError> {
    raw.parse()
        .map_err(|_| AdversaryError::BadParams { name: name.to_string(), reason: format!("cannot parse `{raw}`") })
}

fn expect_params(name: &str, params: &[&str], count: usize) -> Result<(), AdversaryError> {
    if params.len() != count {
        return Err(AdversaryError::BadParams {
            name: name.to_string(),
            reason: format!("expected {count} parameter(s), got {}", params.len()),
        });
    }
    Ok(())
}

impl FromStr for WakeSpec {
    type Err = AdversaryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, params) = split_params(s);
        match name {
            "all-at-zero" => expect_params(name, &params, 0).map(|_| WakeSpec::AllAtZero),
            "single" => expect_params(name, &params, 0).map(|_| WakeSpec::Single),
            "staggered" => {
                expect_params(name, &params, 2)?;
                Ok(WakeSpec::Staggered { k: parse_param(name, params[0])?, gap: parse_param(name, params[1])? })
            }
            "random-subset" => {
                expect_params(name, &params, 1)?;
                Ok(WakeSpec::RandomSubset { p: parse_param(name, params[0])? })
            }
            _ => Err(AdversaryError::UnknownName { kind: "wake schedule", name: name.to_string() }),
        }
    }
}

/// Built-in delay policy names and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DelaySpec {
    Unit,
    UniformRandom,
    EpsilonRush { epsilon: f64 },
    SlowHighRank { epsilon: f64 },
}

pub const DEFAULT_SLOW_HIGH_RANK_EPSILON: f64 = 0.01;

fn epsilon_ticks(eps: f64) -> Result<VirtualTime, AdversaryError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(AdversaryError::EpsilonOutOfRange(eps));
    }
    // epsilons below one tick still need a strictly positive delay
    let t = VirtualTime::from_f64(eps).ok_or(AdversaryError::EpsilonOutOfRange(eps))?;
    Ok(VirtualTime::from_ticks(t.ticks().max(1)))
}

impl DelaySpec {
    pub fn build(&self, rng: StreamRng) -> Result<BuiltinDelay, AdversaryError> {
        let epsilon = match *self {
            DelaySpec::EpsilonRush { epsilon } | DelaySpec::SlowHighRank { epsilon } => epsilon_ticks(epsilon)?,
            DelaySpec::Unit | DelaySpec::UniformRandom => VirtualTime::UNIT,
        };
        Ok(BuiltinDelay { spec: self.clone(), epsilon, rng })
    }
}

impl fmt::Display for DelaySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelaySpec::Unit => f.write_str("unit"),
            DelaySpec::UniformRandom => f.write_str("uniform-random"),
            DelaySpec::EpsilonRush { epsilon } => write!(f, "epsilon-rush:{epsilon}"),
            DelaySpec::SlowHighRank { epsilon } => write!(f, "slow-high-rank:{epsilon}"),
        }
    }
}

impl FromStr for DelaySpec {
    type Err = AdversaryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, params) = split_params(s);
        let spec = match name {
            "unit" => expect_params(name, &params, 0).map(|_| DelaySpec::Unit)?,
            "uniform-random" => expect_params(name, &params, 0).map(|_| DelaySpec::UniformRandom)?,
            "epsilon-rush" => {
                expect_params(name, &params, 1)?;
                DelaySpec::EpsilonRush { epsilon: parse_param(name, params[0])? }
            }
            "slow-high-rank" => {
                let epsilon = match params.as_slice() {
                    [] => DEFAULT_SLOW_HIGH_RANK_EPSILON,
                    [raw] => parse_param(name, raw)?,
                    _ => return Err(expect_params(name, &params, 1).unwrap_err()),
                };
                DelaySpec::SlowHighRank { epsilon }
            }
            _ => return Err(AdversaryError::UnknownName { kind: "delay policy", name: name.to_string() }),
        };
        if let DelaySpec::EpsilonRush { epsilon } | DelaySpec::SlowHighRank { epsilon } = spec {
            epsilon_ticks(epsilon)?;
        }
        Ok(spec)
    }
}

/// Everything the adversary is allowed to know about the run so far.
#[derive(Clone, Debug, Default)]
pub struct HistoryDigest {
    pub wakes: Vec<(NodeId, VirtualTime)>,
    pub sends: u64,
    pub deliveries: u64,
    live: BTreeMap<NodeId, Ticket>,
    by_rank: BTreeSet<(Ticket, NodeId)>,
    pub retired: u64,
}

impl HistoryDigest {
    /// A node drew its rank and is now a live candidate.
    pub fn candidate_revealed(&mut self, node: NodeId, ticket: Ticket) {
        if let Some(old) = self.live.insert(node, ticket) {
            self.by_rank.remove(&(old, node));
        }
        self.by_rank.insert((ticket, node));
    }

    pub fn candidate_retired(&mut self, node: NodeId) {
        if let Some(t) = self.live.remove(&node) {
            self.by_rank.remove(&(t, node));
            self.retired += 1;
        }
    }

    pub fn live_candidates(&self) -> impl Iterator<Item = (NodeId, Ticket)> + '_ {
        self.live.iter().map(|(&v, &t)| (v, t))
    }

    /// The live candidate with the highest rank.
    pub fn leading_candidate(&self) -> Option<NodeId> {
        self.by_rank.iter().next_back().map(|&(_, v)| v)
    }
}

/// What a delay policy sees for one send.
pub struct SendContext<'a> {
    pub from: NodeId,
    pub to: NodeId,
    pub msg: &'a Message,
    pub now: VirtualTime,
    pub history: &'a HistoryDigest,
}

/// Chooses the delay of every remote message. Must return a value in (0, 1].
pub trait DelayPolicy {
    fn delay(&mut self, ctx: &SendContext<'_>) -> VirtualTime;
}

pub struct BuiltinDelay {
    spec: DelaySpec,
    epsilon: VirtualTime,
    rng: StreamRng,
}

impl DelayPolicy for BuiltinDelay {
    fn delay(&mut self, ctx: &SendContext<'_>) -> VirtualTime {
        match self.spec {
            DelaySpec::Unit => VirtualTime::UNIT,
            DelaySpec::UniformRandom => VirtualTime::from_ticks(self.rng.random_range(1..=TICKS_PER_UNIT)),
            DelaySpec::EpsilonRush { .. } => self.epsilon,
            DelaySpec::SlowHighRank { .. } => {
                if ctx.history.leading_candidate() == Some(ctx.from) {
                    VirtualTime::UNIT
                } else {
                    self.epsilon
                }
            }
        }
    }
}

/// The adversary section of a trial configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AdversaryConfig {
    pub wake: WakeSpec,
    pub delay: DelaySpec,
    #[serde(default)]
    pub adversary_seed: u64,
}

impl AdversaryConfig {
    pub fn new(wake: WakeSpec, delay: DelaySpec) -> Self {
        AdversaryConfig { wake, delay, adversary_seed: 0 }
    }

    /// Short human-readable label, e.g. `staggered:8,0.5/unit`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.wake, self.delay)
    }
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig::new(WakeSpec::AllAtZero, DelaySpec::Unit)
    }
}

/// Draws `count` distinct neighbours of `candidate` uniformly at random from
/// the candidate's private stream.
pub fn sample_targets(
    candidate: NodeId,
    count: usize,
    n: usize,
    rng: &mut StreamRng,
) -> Result<Vec<NodeId>, AdversaryError> {
    let available = n.saturating_sub(1);
    if count == 0 || count > available {
        return Err(AdversaryError::SampleCount { count, available });
    }
    let skip = |j: usize| {
        let j = j as u32;
        NodeId(if j < candidate.0 { j } else { j + 1 })
    };
    if count == available {
        return Ok((0..available).map(skip).collect());
    }
    Ok(index::sample(rng, available, count).into_iter().map(skip).collect())
}
