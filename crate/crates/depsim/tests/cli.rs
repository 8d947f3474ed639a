//! End-to-end checks of the command-line interface: exit codes, output
//! files, and override flags.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_depsim"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

#[test]
fn validate_ok_and_run_produces_csvs() {
    let st = bin().arg("validate").arg(scenario("minimal.scn")).status().unwrap();
    assert!(st.success());

    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run"])
        .arg(scenario("minimal.scn"))
        .args(["--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains("submitted=3"), "{line}");
    for f in ["trace.csv", "metrics.csv", "report.csv"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
}

#[test]
fn parse_and_validate_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    std::fs::write(&bad, "[engine]\nbogus = 1\n").unwrap();
    let out = bin().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 2"), "{msg}");

    let dangling = dir.path().join("dangling.scn");
    std::fs::write(&dangling, "[pu p1]\ncenter = nowhere\n").unwrap();
    let out = bin().arg("validate").arg(&dangling).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_exits_3() {
    let out = bin().arg("run").arg("no-such-file.scn").output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn seed_policy_and_reschedule_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run"])
        .arg(scenario("dag-ft.scn"))
        .args(["--seed", "5", "--policy", "mcp", "--no-reschedule", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed=5"));
}

#[test]
fn sweep_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep"])
        .arg(scenario("minimal.scn"))
        .args(["--seeds", "1..3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in 1..=3 {
        assert!(
            dir.path().join(format!("seed-{s}")).join("report.csv").is_file(),
            "missing seed-{s}"
        );
    }
}
