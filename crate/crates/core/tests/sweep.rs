use std::fs;

use leader_sim::adversary::{AdversaryConfig, DelaySpec, WakeSpec};
use leader_sim::harness::{
    attrition_check, attrition_check_through, run_sweep, run_sweep_reports, run_trial, summarize, HarnessError,
    SweepSpec,
};
use leader_sim::protocol::ProtocolKind;

fn spec(protocol: ProtocolKind) -> SweepSpec {
    SweepSpec {
        n_values: vec![16, 40],
        trials: 6,
        protocol,
        unique_ids: false,
        adversary: AdversaryConfig::new(WakeSpec::AllAtZero, DelaySpec::UniformRandom),
        master_seed: 99,
        event_budget: None,
        out: None,
    }
}

const TRIALS_HEADER: &str = "n,trial,seed,protocol,adversary,msgs_total,msgs_request,msgs_reply,msgs_decide,msgs_leader,time,rounds,outcome,trace_hash";
const SUMMARY_HEADER: &str = "n,trials,mean_msgs,max_msgs,messages_per_n,p95_messages_per_n,mean_time,max_time,time_per_log_sq_n,p95_time_per_log_sq_n,success_rate,attrition_violation_rate,attrition_pairs,invariant_violations";

#[test]
fn writes_both_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_sweep(&spec(ProtocolKind::Async), dir.path()).unwrap();
    let trials = fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    let lines: Vec<&str> = trials.lines().collect();
    assert_eq!(lines[0], TRIALS_HEADER);
    assert_eq!(lines.len(), 1 + 12);
    assert!(lines[1].starts_with("16,0,"));
    assert!(lines[7].starts_with("40,0,"));
    let sum = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(sum.lines().next().unwrap(), SUMMARY_HEADER);
    assert_eq!(sum.lines().count(), 3);
    assert_eq!(summary.rows.len(), 2);
    let row = summary.row(40).unwrap();
    assert_eq!(row.trials, 6);
    assert_eq!(row.success_rate, 1.0);
    assert_eq!(summary.invariant_violations(), 0);
}

#[test]
fn sweeps_reproduce_byte_for_byte() {
    for protocol in [ProtocolKind::Async, ProtocolKind::Sync] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_sweep(&spec(protocol), a.path()).unwrap();
        run_sweep(&spec(protocol), b.path()).unwrap();
        for file in ["trials.csv", "summary.csv"] {
            assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap());
        }
    }
}

#[test]
fn sweep_trials_match_single_runs() {
    let s = spec(ProtocolKind::Async);
    let reports = run_sweep_reports(&s).unwrap();
    assert_eq!(reports[7], run_trial(&s.trial(40, 1)).unwrap());
    let summary = summarize(&s, &reports);
    let row = summary.row(16).unwrap();
    let max = reports[..6].iter().map(|r| r.total_remote_messages).max().unwrap();
    assert_eq!(row.max_msgs, max);
}

#[test]
fn invalid_sweeps_are_rejected() {
    let mut s = spec(ProtocolKind::Async);
    s.n_values = vec![16, 1];
    assert!(matches!(run_sweep_reports(&s), Err(HarnessError::Invalid(_))));
    s.n_values.clear();
    assert!(matches!(run_sweep_reports(&s), Err(HarnessError::Invalid(_))));
}

#[test]
fn unwritable_output_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let mut s = spec(ProtocolKind::Sync);
    s.trials = 1;
    let err = run_sweep(&s, &out).unwrap_err();
    assert!(matches!(err, HarnessError::Io { .. }));
    assert!(err.to_string().contains(&*out.to_string_lossy()), "{err}");
}

#[test]
fn sweep_config_loads_from_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    fs::write(
        &path,
        r#"{"nValues": [8], "trials": 2, "protocol": "sync", "masterSeed": 5,
            "adversary": {"wake": {"name": "single"}, "delay": {"name": "unit"}}}"#,
    )
    .unwrap();
    let s = SweepSpec::load(&path).unwrap();
    assert_eq!(s.n_values, vec![8]);
    fs::write(&path, "{\"nValues\": [8],\n \"trials\": 2, \"protocol\": \"sync\", \"bogus\": 1}").unwrap();
    let err = SweepSpec::load(&path).unwrap_err().to_string();
    assert!(err.contains("sweep.json:2:"), "{err}");
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn attrition_is_vacuous_when_the_horizon_is_empty() {
    let s = SweepSpec { n_values: vec![1024], trials: 2, ..spec(ProtocolKind::Async) };
    let reports = run_sweep_reports(&s).unwrap();
    let a = attrition_check(&reports);
    assert_eq!(a.pairs, 0);
    assert_eq!(a.rate, 1.0);
    let through = attrition_check_through(&reports, |_| 3);
    assert_eq!(through.pairs, 6);
    assert_eq!(through.within, 6);
}
