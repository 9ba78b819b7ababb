//! End-to-end runs of the `safering` binary: sweeps, traces, replays,
//! exploration, manifests, and the rejection of illegal parameters.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_safering"))
}

fn tmp(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn sweep_reports_every_seed_and_exits_clean() {
    let report = tmp("sweep.json");
    let out = bin()
        .args(["run", "--variant", "two-reg", "--n", "2", "--K", "6", "--phi", "5"])
        .args(["--seeds", "0..4", "--max-steps", "60000", "--check", "convergence"])
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("5 runs: 5 converged"), "summary missing: {text}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap())
        .expect("report is valid JSON");
    assert_eq!(json["runs"].as_array().unwrap().len(), 5);
}

#[test]
fn illegal_token_domain_names_the_constraint() {
    let out = bin()
        .args(["run", "--variant", "two-reg", "--n", "2", "--K", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("K must satisfy K > 2n"), "stderr: {err}");
}

#[test]
fn illegal_phi_names_the_constraint() {
    let out = bin()
        .args(["run", "--variant", "two-reg", "--n", "3", "--phi", "6"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("phi must satisfy phi > 2n"), "stderr: {err}");
}

#[test]
fn recorded_traces_rerun_byte_identical_and_replay_clean() {
    let first = tmp("gray1.jsonl");
    let second = tmp("gray2.jsonl");
    for path in [&first, &second] {
        let out = bin()
            .args(["run", "--variant", "gray", "--n", "2", "--K", "8", "--seed", "1"])
            .args(["--max-steps", "40000"])
            .arg("--trace")
            .arg(path)
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_eq!(
        fs::read(&first).unwrap(),
        fs::read(&second).unwrap(),
        "same seed, same flags, different trace bytes"
    );

    let out = bin().arg("replay").arg("--trace").arg(&first).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("identical to the recording"), "replay diverged: {text}");
    assert!(text.contains("convergence: Pass"), "missing verdict: {text}");
}

#[test]
fn exploration_prints_the_branch_estimate_up_front() {
    let out = bin()
        .args(["run", "--explore", "qa-single-write", "--k", "2", "--domain", "3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("estimated branches:"), "no estimate: {text}");
    assert!(text.contains("max contaminated on a branch: 0"), "contamination: {text}");
}

#[test]
fn unknown_scenarios_list_the_valid_names() {
    let out = bin().args(["run", "--explore", "qa-nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("qa-single-write"), "stderr: {err}");
}

#[test]
fn manifest_reruns_are_byte_identical() {
    let r1 = tmp("man1.json");
    let r2 = tmp("man2.json");
    for report in [&r1, &r2] {
        let manifest = tmp("manifest.json");
        fs::write(
            &manifest,
            format!(
                r#"{{"variant":"two-reg","n":2,"K":6,"phi":5,"seeds":"0..3",
                     "max-steps":30000,"check":["convergence","qa"],
                     "report":{:?}}}"#,
                report.display().to_string()
            ),
        )
        .unwrap();
        let out = bin().arg("manifest").arg(&manifest).output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_eq!(
        fs::read(&r1).unwrap(),
        fs::read(&r2).unwrap(),
        "manifest reruns must reproduce the report bytes"
    );
}

#[test]
fn manifests_reject_unknown_keys() {
    let manifest = tmp("typo.json");
    fs::write(&manifest, r#"{"variant":"gray","seedz":"0..3"}"#).unwrap();
    let out = bin().arg("manifest").arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seedz"), "stderr: {err}");
}
