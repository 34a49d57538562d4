//! C interface to the leader election simulator.
//!
//! Every function returns an [`LsStatus`]; on failure a description is kept
//! per thread and can be read with [`ls_last_error_message`]. Reports are
//! opaque handles owned by the caller and released with [`ls_report_free`].
//! Strings returned by the library are released with [`ls_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use leader_sim::harness::{
    parse_json, run_sweep, run_trial, run_trial_traced, verify_trace, HarnessError, SweepSpec, TrialOutcome,
    TrialReport, TrialSpec, VerifyError,
};
use leader_sim::protocol::ProtocolKind;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON or an unknown field.
    InvalidConfig = 3,
    /// Well-formed input the simulator refuses (n = 0, bad adversary).
    InvalidInput = 4,
    Io = 5,
    /// The run completed but invariant checks failed.
    Violations = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsProtocol {
    Async = 0,
    Sync = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsOutcome {
    Success = 0,
    MultiLeader = 1,
    NoLeader = 2,
    Nonterminating = 3,
}

/// Opaque trial report.
pub struct LsReport {
    inner: TrialReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Fail(LsStatus, String);

impl From<HarnessError> for Fail {
    fn from(e: HarnessError) -> Self {
        let status = match &e {
            HarnessError::Config(_) => LsStatus::InvalidConfig,
            HarnessError::Io { .. } => LsStatus::Io,
            _ => LsStatus::InvalidInput,
        };
        Fail(status, e.to_string())
    }
}

impl From<VerifyError> for Fail {
    fn from(e: VerifyError) -> Self {
        let status = match &e {
            VerifyError::Io { .. } => LsStatus::Io,
            _ => LsStatus::InvalidConfig,
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<LsStatus, Fail>) -> LsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            LsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(LsStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(LsStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn null(name: &str) -> Fail {
    Fail(LsStatus::NullArgument, format!("`{name}` is null"))
}

fn finish_trial(report: TrialReport, out: *mut *mut LsReport) -> LsStatus {
    let status = if report.invariant_violations.is_empty() { LsStatus::Ok } else { LsStatus::Violations };
    if status == LsStatus::Violations {
        set_error(format!("{} invariant violations", report.invariant_violations.len()));
    }
    // SAFETY: checked non-null by callers.
    unsafe { *out = Box::into_raw(Box::new(LsReport { inner: report })) };
    status
}

/// Runs one trial with default (all-at-zero, unit delay) adversary.
///
/// # Safety
/// `protocol` must be one of the declared values; `out` must point to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ls_run_trial(
    protocol: LsProtocol,
    n: usize,
    seed: u64,
    unique_ids: bool,
    out: *mut *mut LsReport,
) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let protocol = match protocol {
            LsProtocol::Async => ProtocolKind::Async,
            LsProtocol::Sync => ProtocolKind::Sync,
        };
        let report = run_trial(&TrialSpec::new(protocol, n, seed).with_unique_ids(unique_ids))?;
        Ok(finish_trial(report, out))
    })
}

/// Runs the trial described by `spec_json` (a JSON trial spec). When
/// `trace_path` is non-null the JSONL trace is written there.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string, `trace_path` null or
/// NUL-terminated, `out` valid for one handle write.
#[no_mangle]
pub unsafe extern "C" fn ls_run_trial_json(
    spec_json: *const c_char,
    trace_path: *const c_char,
    out: *mut *mut LsReport,
) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(spec_json, "spec_json")?;
        let spec: TrialSpec =
            parse_json(text, "spec_json").map_err(|e| Fail(LsStatus::InvalidConfig, e.to_string()))?;
        let report = if trace_path.is_null() {
            run_trial(&spec)?
        } else {
            let path = Path::new(str_arg(trace_path, "trace_path")?);
            let file = File::create(path).map_err(|e| Fail(LsStatus::Io, format!("{}: {e}", path.display())))?;
            run_trial_traced(&spec, BufWriter::new(file))?
        };
        Ok(finish_trial(report, out))
    })
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_report_free(report: *mut LsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

unsafe fn report_ref<'a>(report: *const LsReport) -> Option<&'a TrialReport> {
    report.as_ref().map(|r| &r.inner)
}

/// Remote messages delivered; 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_report_total_messages(report: *const LsReport) -> u64 {
    report_ref(report).map_or(0, |r| r.total_remote_messages)
}

/// Virtual time from first wakeup to last event, in time units.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_report_elapsed(report: *const LsReport) -> f64 {
    report_ref(report).map_or(0.0, |r| r.elapsed_virtual_time.as_f64())
}

/// Rounds for a synchronous trial, -1 otherwise.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_report_rounds(report: *const LsReport) -> i64 {
    report_ref(report).and_then(|r| r.round_count).map_or(-1, |c| c as i64)
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_report_elected_count(report: *const LsReport) -> u64 {
    report_ref(report).map_or(0, |r| r.elected_count)
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_report_trace_hash(report: *const LsReport) -> u64 {
    report_ref(report).map_or(0, |r| r.trace_hash)
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_report_violation_count(report: *const LsReport) -> usize {
    report_ref(report).map_or(0, |r| r.invariant_violations.len())
}

/// Outcome of the trial; `Nonterminating` for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_report_outcome(report: *const LsReport) -> LsOutcome {
    match report_ref(report).map(|r| r.outcome) {
        Some(TrialOutcome::Success) => LsOutcome::Success,
        Some(TrialOutcome::MultiLeader) => LsOutcome::MultiLeader,
        Some(TrialOutcome::NoLeader) => LsOutcome::NoLeader,
        Some(TrialOutcome::Nonterminating) | None => LsOutcome::Nonterminating,
    }
}

/// Full report as JSON, or null for a null handle. Free with
/// [`ls_string_free`].
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_report_to_json(report: *const LsReport) -> *mut c_char {
    let Some(r) = report_ref(report) else {
        set_error("`report` is null");
        return ptr::null_mut();
    };
    match serde_json::to_string(r).ok().and_then(|s| CString::new(s).ok()) {
        Some(s) => s.into_raw(),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Replays the trace at `path`. Writes the violation count and trace hash
/// when the out pointers are non-null. Returns `Violations` if any were
/// found.
///
/// # Safety
/// `path` must be NUL-terminated; out pointers null or writable.
#[no_mangle]
pub unsafe extern "C" fn ls_verify_trace(path: *const c_char, violations: *mut usize, hash: *mut u64) -> LsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let report = verify_trace(Path::new(path))?;
        if !violations.is_null() {
            *violations = report.violations.len();
        }
        if !hash.is_null() {
            *hash = report.hash;
        }
        if let Some(first) = report.violations.first() {
            set_error(first.to_string());
            return Ok(LsStatus::Violations);
        }
        Ok(LsStatus::Ok)
    })
}

/// Runs the sweep configured in the JSON file `config_path` and writes
/// `trials.csv` and `summary.csv` into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ls_sweep_run(config_path: *const c_char, out_dir: *const c_char) -> LsStatus {
    guard(|| {
        let spec = SweepSpec::load(Path::new(str_arg(config_path, "config_path")?))?;
        let summary = run_sweep(&spec, Path::new(str_arg(out_dir, "out_dir")?))?;
        let bad = summary.invariant_violations();
        if bad > 0 {
            set_error(format!("{bad} invariant violations"));
            return Ok(LsStatus::Violations);
        }
        Ok(LsStatus::Ok)
    })
}
