//! Parameter sweeps: many trials per network size, per-trial and summary CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config, run_trial, HarnessError, TrialOutcome, TrialReport, TrialSpec};
use crate::adversary::AdversaryConfig;
use crate::message::MessageClass;
use crate::protocol::{PhaseSchedule, ProtocolKind};
use crate::rng::trial_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SweepSpec {
    pub n_values: Vec<usize>,
    pub trials: u64,
    pub protocol: ProtocolKind,
    #[serde(default)]
    pub unique_ids: bool,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_budget: Option<u64>,
    /// Output directory; the command line may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Ok(config::load_json(path)?)
    }

    /// The spec of trial `index` at size `n`.
    pub fn trial(&self, n: usize, index: u64) -> TrialSpec {
        TrialSpec {
            protocol: self.protocol,
            n,
            seed: trial_seed(self.master_seed, n, index),
            unique_ids: self.unique_ids,
            adversary: self.adversary.clone(),
            event_budget: self.event_budget,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.n_values.is_empty() {
            return Err(HarnessError::Invalid("nValues is empty".into()));
        }
        if let Some(&n) = self.n_values.iter().find(|&&n| n < 2) {
            return Err(HarnessError::Invalid(format!("sweep sizes must be at least 2, got {n}")));
        }
        Ok(())
    }
}

/// One row of `trials.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub n: usize,
    pub trial: u64,
    pub seed: u64,
    pub protocol: ProtocolKind,
    pub adversary: String,
    pub msgs_total: u64,
    pub msgs_request: u64,
    pub msgs_reply: u64,
    pub msgs_decide: u64,
    pub msgs_leader: u64,
    pub time: f64,
    pub rounds: Option<u64>,
    pub outcome: TrialOutcome,
    pub trace_hash: String,
}

impl TrialRow {
    pub fn new(trial: u64, r: &TrialReport) -> Self {
        TrialRow {
            n: r.n,
            trial,
            seed: r.seed,
            protocol: r.protocol,
            adversary: r.adversary.label(),
            msgs_total: r.total_remote_messages,
            msgs_request: r.class_count(MessageClass::Request),
            msgs_reply: r.class_count(MessageClass::Reply),
            msgs_decide: r.class_count(MessageClass::Decide),
            msgs_leader: r.class_count(MessageClass::Leader),
            time: r.elapsed_virtual_time.as_f64(),
            rounds: r.round_count,
            outcome: r.outcome,
            trace_hash: format!("{:016x}", r.trace_hash),
        }
    }
}

/// One row of `summary.csv`: aggregates over the trials of one size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub trials: u64,
    pub mean_msgs: f64,
    pub max_msgs: u64,
    pub messages_per_n: f64,
    pub p95_messages_per_n: f64,
    pub mean_time: f64,
    pub max_time: f64,
    pub time_per_log_sq_n: f64,
    pub p95_time_per_log_sq_n: f64,
    pub success_rate: f64,
    pub attrition_violation_rate: f64,
    pub attrition_pairs: u64,
    pub invariant_violations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    pub fn row(&self, n: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    pub fn invariant_violations(&self) -> u64 {
        self.rows.iter().map(|r| r.invariant_violations).sum()
    }
}

/// Nearest-rank percentile, `p` in `[0, 100]`. Zero for an empty slice.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// `⌈n / 4^{i−1}⌉`: most candidates expected to start phase `i`.
pub fn attrition_bound(n: usize, phase: u32) -> u64 {
    let div = 4u128.saturating_pow(phase.saturating_sub(1));
    (n as u128).div_ceil(div) as u64
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AttritionSummary {
    /// (trial, phase) pairs examined.
    pub pairs: u64,
    /// Pairs whose candidate count stayed within the bound.
    pub within: u64,
    /// `within / pairs`, or 1 when there are no pairs.
    pub rate: f64,
}

/// Fraction of (trial, phase `i ≤ ρ`) pairs where at most `⌈n/4^{i−1}⌉`
/// candidates started phase `i`; `ρ = K − ⌈log₂ log₂ n⌉ − 5` per trial.
pub fn attrition_check(reports: &[TrialReport]) -> AttritionSummary {
    attrition_check_through(reports, |n| PhaseSchedule::new(n).attrition_horizon())
}

/// [`attrition_check`] with a caller-chosen last phase per network size.
pub fn attrition_check_through(reports: &[TrialReport], last_phase: impl Fn(usize) -> i64) -> AttritionSummary {
    let mut s = AttritionSummary::default();
    for r in reports.iter().filter(|r| r.protocol == ProtocolKind::Async) {
        let last = last_phase(r.n);
        for (i, &count) in r.per_phase_candidate_counts.iter().enumerate().skip(1) {
            if i as i64 > last {
                break;
            }
            s.pairs += 1;
            if count <= attrition_bound(r.n, i as u32) {
                s.within += 1;
            }
        }
    }
    s.rate = if s.pairs == 0 { 1.0 } else { s.within as f64 / s.pairs as f64 };
    s
}

/// Runs every trial of `spec` in parallel. Reports come back sorted by
/// `(n, trial)` in `nValues` order.
pub fn run_sweep_reports(spec: &SweepSpec) -> Result<Vec<TrialReport>, HarnessError> {
    spec.validate()?;
    let jobs: Vec<(usize, u64)> = spec.n_values.iter().flat_map(|&n| (0..spec.trials).map(move |i| (n, i))).collect();
    jobs.par_iter().map(|&(n, i)| run_trial(&spec.trial(n, i))).collect()
}

/// Aggregates reports (as returned by [`run_sweep_reports`]) per size.
pub fn summarize(spec: &SweepSpec, reports: &[TrialReport]) -> SweepSummary {
    let mut rows = Vec::new();
    for &n in &spec.n_values {
        let group: Vec<TrialReport> = reports.iter().filter(|r| r.n == n).cloned().collect();
        if group.is_empty() {
            continue;
        }
        let count = group.len() as f64;
        let msgs: Vec<f64> = group.iter().map(|r| r.total_remote_messages as f64).collect();
        let times: Vec<f64> = group.iter().map(|r| r.elapsed_virtual_time.as_f64()).collect();
        let log_sq = (n as f64).log2().powi(2);
        let per_n: Vec<f64> = msgs.iter().map(|m| m / n as f64).collect();
        let per_log: Vec<f64> = times.iter().map(|t| t / log_sq).collect();
        let mean_msgs = msgs.iter().sum::<f64>() / count;
        let mean_time = times.iter().sum::<f64>() / count;
        let attrition = attrition_check(&group);
        rows.push(SweepRow {
            n,
            trials: group.len() as u64,
            mean_msgs,
            max_msgs: group.iter().map(|r| r.total_remote_messages).max().unwrap_or(0),
            messages_per_n: mean_msgs / n as f64,
            p95_messages_per_n: percentile(&per_n, 95.0),
            mean_time,
            max_time: times.iter().copied().fold(0.0, f64::max),
            time_per_log_sq_n: mean_time / log_sq,
            p95_time_per_log_sq_n: percentile(&per_log, 95.0),
            success_rate: group.iter().filter(|r| r.outcome.is_success()).count() as f64 / count,
            attrition_violation_rate: 1.0 - attrition.rate,
            attrition_pairs: attrition.pairs,
            invariant_violations: group.iter().map(|r| r.invariant_violations.len() as u64).sum(),
        });
    }
    SweepSummary { rows }
}

/// Writes `trials.csv` and `summary.csv` into `dir`, creating it if needed.
pub fn write_sweep(dir: &Path, reports: &[TrialReport], summary: &SweepSummary) -> Result<(), HarnessError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let trials_path = dir.join("trials.csv");
    let mut w = csv::Writer::from_path(&trials_path).map_err(|e| csv_err(&trials_path, e))?;
    let mut index = std::collections::HashMap::<usize, u64>::new();
    for r in reports {
        let i = index.entry(r.n).or_default();
        w.serialize(TrialRow::new(*i, r)).map_err(|e| csv_err(&trials_path, e))?;
        *i += 1;
    }
    w.flush().map_err(io_err(&trials_path))?;

    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| csv_err(&summary_path, e))?;
    for row in &summary.rows {
        w.serialize(row).map_err(|e| csv_err(&summary_path, e))?;
    }
    w.flush().map_err(io_err(&summary_path))?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), source: std::io::Error::other(e) }
}

/// Runs the sweep, writes both CSVs into `out` and returns the summary.
pub fn run_sweep(spec: &SweepSpec, out: &Path) -> Result<SweepSummary, HarnessError> {
    let reports = run_sweep_reports(spec)?;
    let summary = summarize(spec, &reports);
    write_sweep(out, &reports, &summary)?;
    Ok(summary)
}
