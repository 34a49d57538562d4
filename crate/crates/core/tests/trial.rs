mod common;

use std::hash::Hasher;

use leader_sim::adversary::{AdversaryConfig, DelaySpec, WakeSpec};
use leader_sim::harness::{
    parse_json, run_trial, run_trial_traced, verify_trace, HarnessError, TrialOutcome, TrialSpec,
};
use leader_sim::protocol::ProtocolKind;
use leader_sim::trace::Fnv1a;

use common::traced;

fn adv(wake: WakeSpec, delay: DelaySpec) -> AdversaryConfig {
    AdversaryConfig::new(wake, delay)
}

#[test]
fn two_nodes_single_wake_elects_the_woken_node() {
    let spec = TrialSpec::new(ProtocolKind::Async, 2, 11).with_adversary(adv(WakeSpec::Single, DelaySpec::Unit));
    let (report, lines) = traced(&spec);
    assert_eq!(report.outcome, TrialOutcome::Success);
    assert_eq!(report.elected_count, 1);
    let elected: Vec<_> = lines
        .iter()
        .flat_map(|l| l["notes"].as_array().cloned().unwrap_or_default())
        .filter(|n| n["note"] == "Candidate" && n["to"] == "Elected")
        .collect();
    assert_eq!(elected.len(), 1);
    assert_eq!(elected[0]["node"], 0);
    let rank = lines.iter().find(|l| l["msgType"] == "REQUEST").unwrap()["msgFields"]["rank"].as_u64();
    assert_eq!(report.leader_ranks, vec![rank.unwrap()]);
}

#[test]
fn single_node_sync_elects_itself_without_messages() {
    let report = run_trial(&TrialSpec::new(ProtocolKind::Sync, 1, 3)).unwrap();
    assert_eq!(report.outcome, TrialOutcome::Success);
    assert_eq!(report.total_remote_messages, 0);
    assert!(report.round_count.unwrap() <= 7);
    assert_eq!(report.first_activation_round, Some(0));
}

#[test]
fn single_node_async_elects_itself() {
    let report = run_trial(&TrialSpec::new(ProtocolKind::Async, 1, 3)).unwrap();
    assert_eq!(report.outcome, TrialOutcome::Success);
    assert_eq!(report.total_remote_messages, 0);
}

#[test]
fn counts_agree_with_the_trace() {
    let specs = [
        TrialSpec::new(ProtocolKind::Async, 48, 5)
            .with_unique_ids(true)
            .with_adversary(adv(WakeSpec::AllAtZero, DelaySpec::UniformRandom)),
        TrialSpec::new(ProtocolKind::Sync, 48, 5)
            .with_adversary(adv(WakeSpec::Staggered { k: 8, gap: 0.5 }, DelaySpec::Unit)),
    ];
    for spec in specs {
        let (report, lines) = traced(&spec);
        let delivered = lines.iter().filter(|l| l["kind"] == "Deliver").count() as u64;
        let local = lines.iter().filter(|l| l["kind"] == "LocalDeliver").count() as u64;
        assert_eq!(report.total_remote_messages, delivered);
        assert_eq!(report.total_remote_messages, report.message_counts.values().sum::<u64>());
        assert_eq!(report.local_messages, local);
        for (tag, count) in &report.message_counts {
            let seen = lines.iter().filter(|l| l["kind"] == "Deliver" && l["msgType"] == *tag).count() as u64;
            assert_eq!(seen, *count, "{tag}");
        }
        assert!(report.invariant_violations.is_empty(), "{:?}", report.invariant_violations);
        assert_eq!(report.events as usize, lines.len() - 1);
    }
}

#[test]
fn elapsed_time_runs_from_first_wake_to_last_event() {
    let spec = TrialSpec::new(ProtocolKind::Async, 40, 9)
        .with_adversary(adv(WakeSpec::Staggered { k: 4, gap: 0.25 }, DelaySpec::UniformRandom));
    let (report, lines) = traced(&spec);
    let first = lines.iter().find(|l| l["kind"] == "Wakeup").unwrap()["t"].as_f64().unwrap();
    let last = lines
        .iter()
        .filter(|l| l["kind"] != "Wakeup" || l.get("ignored").is_none())
        .filter_map(|l| l["t"].as_f64())
        .fold(0.0, f64::max);
    assert!((report.elapsed_virtual_time.as_f64() - (last - first)).abs() < 1e-9);
}

#[test]
fn reruns_are_identical_and_seeds_matter() {
    let spec = TrialSpec::new(ProtocolKind::Async, 64, 77)
        .with_adversary(adv(WakeSpec::RandomSubset { p: 0.3 }, DelaySpec::SlowHighRank { epsilon: 0.01 }));
    let a = run_trial(&spec).unwrap();
    let b = run_trial(&spec).unwrap();
    assert_eq!(a, b);
    let c = run_trial(&TrialSpec { seed: 78, ..spec.clone() }).unwrap();
    assert_ne!(a.trace_hash, c.trace_hash);
    let mut adv_changed = spec.clone();
    adv_changed.adversary.adversary_seed = 1;
    assert_ne!(run_trial(&adv_changed).unwrap().trace_hash, a.trace_hash);
}

#[test]
fn trace_hash_is_fnv_of_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let spec = TrialSpec::new(ProtocolKind::Sync, 32, 1).with_unique_ids(true);
    let report = run_trial_traced(&spec, std::fs::File::create(&path).unwrap()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let mut h = Fnv1a::new();
    h.write(&bytes);
    assert_eq!(h.finish(), report.trace_hash);
    let verified = verify_trace(&path).unwrap();
    assert_eq!(verified.hash, report.trace_hash);
    assert!(verified.violations.is_empty());
    assert_eq!(run_trial(&spec).unwrap().trace_hash, report.trace_hash);
}

#[test]
fn unique_ids_succeed_under_every_builtin_adversary() {
    let wakes = [
        WakeSpec::AllAtZero,
        WakeSpec::Single,
        WakeSpec::Staggered { k: 8, gap: 0.5 },
        WakeSpec::RandomSubset { p: 0.1 },
    ];
    let delays = [
        DelaySpec::Unit,
        DelaySpec::UniformRandom,
        DelaySpec::EpsilonRush { epsilon: 0.01 },
        DelaySpec::SlowHighRank { epsilon: 0.01 },
    ];
    for protocol in [ProtocolKind::Async, ProtocolKind::Sync] {
        for wake in &wakes {
            for delay in &delays {
                for seed in 0..3 {
                    let spec = TrialSpec::new(protocol, 50, seed)
                        .with_unique_ids(true)
                        .with_adversary(adv(wake.clone(), delay.clone()));
                    let r = run_trial(&spec).unwrap();
                    assert_eq!(r.outcome, TrialOutcome::Success, "{protocol} {wake} {delay} seed {seed}");
                    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
                    assert!(r.agreement);
                }
            }
        }
    }
}

#[test]
fn exhausted_budget_is_nonterminating() {
    let mut spec = TrialSpec::new(ProtocolKind::Async, 32, 1);
    spec.event_budget = Some(50);
    let r = run_trial(&spec).unwrap();
    assert_eq!(r.outcome, TrialOutcome::Nonterminating);
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    assert_eq!(r.events, 50);
}

#[test]
fn bad_trials_are_rejected() {
    assert!(matches!(run_trial(&TrialSpec::new(ProtocolKind::Async, 0, 1)), Err(HarnessError::Invalid(_))));
    let spec = TrialSpec::new(ProtocolKind::Async, 4, 1)
        .with_adversary(adv(WakeSpec::Staggered { k: 8, gap: 0.5 }, DelaySpec::Unit));
    assert!(matches!(run_trial(&spec), Err(HarnessError::Adversary(_))));
}

#[test]
fn trial_spec_json_round_trips() {
    let text = r#"{
        "protocol": "sync",
        "n": 16,
        "seed": 4,
        "uniqueIds": true,
        "adversary": {"wake": {"name": "staggered", "k": 3, "gap": 1.5}, "delay": {"name": "unit"}}
    }"#;
    let spec: TrialSpec = parse_json(text, "inline").unwrap();
    assert_eq!(spec.adversary.wake, WakeSpec::Staggered { k: 3, gap: 1.5 });
    let again: TrialSpec = parse_json(&serde_json::to_string(&spec).unwrap(), "again").unwrap();
    assert_eq!(spec, again);
    let report = run_trial(&spec).unwrap();
    let json = serde_json::to_string(&report).unwrap();
    assert_eq!(serde_json::from_str::<leader_sim::harness::TrialReport>(&json).unwrap(), report);
}

#[test]
fn corrupt_config_names_line_and_field() {
    let text = "{\n  \"protocol\": \"async\",\n  \"n\": 16,\n  \"seed\": 4,\n  \"adversary\": {\"wake\": {\"name\": \"sometimes\"}, \"delay\": {\"name\": \"unit\"}}\n}";
    let err = parse_json::<TrialSpec>(text, "trial.json").unwrap_err().to_string();
    assert!(err.starts_with("trial.json:5:"), "{err}");
    assert!(err.contains("sometimes"), "{err}");
}
