#![allow(dead_code)]

use std::io::Cursor;
use std::path::Path;

use leader_sim::harness::{run_trial_traced, verify_reader, TrialReport, TrialSpec, VerifyReport, ViolationKind};
use serde_json::Value;

/// Runs `spec` and returns its report with the trace as parsed JSON lines.
pub fn traced(spec: &TrialSpec) -> (TrialReport, Vec<Value>) {
    let mut bytes = Vec::new();
    let report = run_trial_traced(spec, &mut bytes).unwrap();
    let lines = String::from_utf8(bytes).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    (report, lines)
}

pub fn verify_lines(lines: &[Value]) -> VerifyReport {
    let mut text = String::new();
    for l in lines {
        text.push_str(&serde_json::to_string(l).unwrap());
        text.push('\n');
    }
    verify_reader(Cursor::new(text), Path::new("<memory>")).unwrap()
}

pub fn kinds(report: &VerifyReport) -> Vec<ViolationKind> {
    report.violations.iter().map(|v| v.kind).collect()
}

pub fn is_delivery(l: &Value) -> bool {
    l["kind"] == "Deliver"
}

fn notes_mut(l: &mut Value) -> Option<&mut Vec<Value>> {
    l.get_mut("notes").and_then(Value::as_array_mut)
}

/// Swaps the send order of two deliveries on one edge.
pub fn corrupt_fifo(lines: &[Value]) -> Option<Vec<Value>> {
    let mut out = lines.to_vec();
    let mut last: std::collections::HashMap<(u64, u64), usize> = Default::default();
    for (i, l) in lines.iter().enumerate().skip(1) {
        if !is_delivery(l) {
            continue;
        }
        let edge = (l["from"].as_u64()?, l["to"].as_u64()?);
        if let Some(&j) = last.get(&edge) {
            if lines[j]["t"] != l["t"] && lines[j]["sent"] != l["sent"] {
                let (a, b) = (lines[j]["seq"].clone(), l["seq"].clone());
                out[j]["seq"] = b;
                out[i]["seq"] = a;
                return Some(out);
            }
        }
        last.insert(edge, i);
    }
    None
}

/// Turns the first referee `C0 -> C1` note into `C0 -> C2`.
pub fn corrupt_referee_note(lines: &[Value]) -> Option<Vec<Value>> {
    let mut out = lines.to_vec();
    for l in out.iter_mut() {
        if let Some(notes) = notes_mut(l) {
            for n in notes.iter_mut() {
                if n["note"] == "Referee" && n["from"] == "C0" && n["to"] == "C1" {
                    n["to"] = "C2".into();
                    return Some(out);
                }
            }
        }
    }
    None
}

/// Drops a remote APPROVED delivery that carries no notes.
pub fn drop_approved(lines: &[Value]) -> Option<Vec<Value>> {
    let i = lines.iter().position(|l| is_delivery(l) && l["msgType"] == "APPROVED" && l.get("notes").is_none())?;
    let mut out = lines.to_vec();
    out.remove(i);
    Some(out)
}

/// Rewrites one losing candidate's final note to `Elected`.
pub fn second_elected(lines: &[Value]) -> Option<Vec<Value>> {
    let mut out = lines.to_vec();
    for l in out.iter_mut() {
        if let Some(notes) = notes_mut(l) {
            for n in notes.iter_mut() {
                if n["note"] == "Candidate" && n["to"] == "NonElected" {
                    n["to"] = "Elected".into();
                    return Some(out);
                }
            }
        }
    }
    None
}

/// Moves the last synchronous delivery ten rounds past the first wakeup.
pub fn late_sync_delivery(lines: &[Value]) -> Option<Vec<Value>> {
    let first = lines.iter().find(|l| l["kind"] == "Wakeup")?["round"].as_u64()?;
    let i = lines.iter().rposition(is_delivery)?;
    let late = first + 10;
    if lines[i]["round"].as_u64()? >= late {
        return None;
    }
    let mut out = lines.to_vec();
    let l = &mut out[i];
    l["t"] = (late as f64).into();
    l["round"] = late.into();
    l["sent"] = ((late - 1) as f64).into();
    Some(out)
}
