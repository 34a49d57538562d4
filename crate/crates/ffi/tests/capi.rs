use std::ffi::{CStr, CString};
use std::fs;
use std::ptr;

use leader_sim_ffi::*;

fn last_error() -> String {
    let p = ls_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn run_trial_and_read_back() {
    let mut report = ptr::null_mut();
    let status = unsafe { ls_run_trial(LsProtocol::Async, 64, 9, true, &mut report) };
    assert_eq!(status, LsStatus::Ok);
    assert!(ls_last_error_message().is_null());
    unsafe {
        assert_eq!(ls_report_outcome(report), LsOutcome::Success);
        assert_eq!(ls_report_elected_count(report), 1);
        assert!(ls_report_total_messages(report) > 0);
        assert!(ls_report_elapsed(report) > 0.0);
        assert_eq!(ls_report_rounds(report), -1);
        assert_eq!(ls_report_violation_count(report), 0);

        let json = ls_report_to_json(report);
        let value: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(value["n"], 64);
        assert_eq!(value["traceHash"], format!("{:016x}", ls_report_trace_hash(report)));
        ls_string_free(json);
        ls_report_free(report);
    }
}

#[test]
fn sync_reports_rounds() {
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { ls_run_trial(LsProtocol::Sync, 32, 1, false, &mut report) }, LsStatus::Ok);
    let rounds = unsafe { ls_report_rounds(report) };
    assert!((0..=9).contains(&rounds), "{rounds}");
    unsafe { ls_report_free(report) };
}

#[test]
fn json_trial_with_trace_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let trace_c = CString::new(trace.to_str().unwrap()).unwrap();
    let spec = CString::new(
        r#"{"protocol":"async","n":40,"seed":3,"adversary":{"wake":{"name":"single"},"delay":{"name":"uniform-random"}}}"#,
    )
    .unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { ls_run_trial_json(spec.as_ptr(), trace_c.as_ptr(), &mut report) }, LsStatus::Ok);
    let hash = unsafe { ls_report_trace_hash(report) };
    unsafe { ls_report_free(report) };

    let (mut violations, mut verified) = (usize::MAX, 0u64);
    assert_eq!(unsafe { ls_verify_trace(trace_c.as_ptr(), &mut violations, &mut verified) }, LsStatus::Ok);
    assert_eq!(violations, 0);
    assert_eq!(verified, hash);

    let text = fs::read_to_string(&trace).unwrap();
    fs::write(&trace, text.replacen("\"from\":\"C0\",\"to\":\"C1\"", "\"from\":\"C0\",\"to\":\"C2\"", 1)).unwrap();
    assert_eq!(unsafe { ls_verify_trace(trace_c.as_ptr(), &mut violations, ptr::null_mut()) }, LsStatus::Violations);
    assert!(violations > 0);
    assert!(last_error().contains("referee"), "{}", last_error());
}

#[test]
fn errors_set_status_and_message() {
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { ls_run_trial_json(ptr::null(), ptr::null(), &mut report) }, LsStatus::NullArgument);
    assert!(last_error().contains("spec_json"));

    let bad = CString::new(r#"{"protocol":"async","n":4,"seed":1,"colour":2}"#).unwrap();
    assert_eq!(unsafe { ls_run_trial_json(bad.as_ptr(), ptr::null(), &mut report) }, LsStatus::InvalidConfig);
    assert!(last_error().contains("colour"));
    assert!(report.is_null());

    assert_eq!(unsafe { ls_run_trial(LsProtocol::Async, 0, 1, false, &mut report) }, LsStatus::InvalidInput);
    assert_eq!(unsafe { ls_run_trial(LsProtocol::Async, 4, 1, false, ptr::null_mut()) }, LsStatus::NullArgument);

    let missing = CString::new("/nonexistent/t.jsonl").unwrap();
    assert_eq!(unsafe { ls_verify_trace(missing.as_ptr(), ptr::null_mut(), ptr::null_mut()) }, LsStatus::Io);
    assert!(last_error().contains("/nonexistent/t.jsonl"));

    unsafe {
        assert!(ls_report_to_json(ptr::null()).is_null());
        assert_eq!(ls_report_total_messages(ptr::null()), 0);
        ls_report_free(ptr::null_mut());
        ls_string_free(ptr::null_mut());
    }
}

#[test]
fn sweep_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.json");
    fs::write(&config, r#"{"nValues":[8,12],"trials":2,"protocol":"sync"}"#).unwrap();
    let out = dir.path().join("out");
    let config_c = CString::new(config.to_str().unwrap()).unwrap();
    let out_c = CString::new(out.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ls_sweep_run(config_c.as_ptr(), out_c.as_ptr()) }, LsStatus::Ok);
    assert_eq!(fs::read_to_string(out.join("trials.csv")).unwrap().lines().count(), 5);
    assert!(out.join("summary.csv").exists());
}
