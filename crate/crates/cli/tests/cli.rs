use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dynmri(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynmri")).args(args).current_dir(cwd).output().unwrap()
}

fn stderr_line(o: &Output) -> String {
    let s = String::from_utf8_lossy(&o.stderr).into_owned();
    let lines: Vec<&str> = s.lines().filter(|l| l.starts_with("error: ")).collect();
    assert_eq!(lines.len(), 1, "stderr: {s}");
    lines[0].to_string()
}

const TINY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/tiny.toml");

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dynmri(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(dynmri(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = dynmri(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: config: "));

    fs::write(dir.path().join("bad.toml"), "[phantom]\nsize = 7\n").unwrap();
    let o = dynmri(&["--config", "bad.toml", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("phantom.size"));

    let o = dynmri(&["--config", "missing.toml", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = dynmri(&["--config", TINY, "train", "--manifest", "nowhere"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    stderr_line(&o);

    fs::write(dir.path().join("m.csv"), "method,accel\nzero-filled,3\n").unwrap();
    let o = dynmri(&["report", "--metrics", "m.csv"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn numeric_failure_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    // drift this large never passes the regularity check
    fs::write(dir.path().join("wild.toml"), format!("{}\n", fs::read_to_string(TINY).unwrap().replace("[phantom]", "[phantom]\ndrift_px_max = 40.0\nmax_attempts = 2"))).unwrap();
    let o = dynmri(&["--config", "wild.toml", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stderr_line(&o).starts_with("error: numeric: "));
}

#[test]
fn simulate_baseline_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = dynmri(&["--config", TINY, "--deterministic", "--out", "data", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("data/manifest.toml").is_file());

    let o = dynmri(&["--config", TINY, "--out", "rep", "sweep", "--manifest", "data"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).contains("checkpoint"));

    let o = dynmri(&["--config", TINY, "--out", "base", "baseline", "--manifest", "data"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(table.contains("zero-filled") && table.contains("cs"));

    let o = dynmri(&["report", "--metrics", "base/metrics.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);

    let o = dynmri(&["--config", TINY, "--seed", "4", "sweep", "--manifest", "data", "--methods", "cs"], dir.path());
    assert_eq!(o.status.code(), Some(2), "seed override changes the simulation fingerprint");
}

#[test]
fn train_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dynmri(&["--config", TINY, "--out", "data", "simulate"], dir.path()).status.code(), Some(0));
    let o = dynmri(&["--config", TINY, "--out", "model", "train", "--manifest", "data/manifest.toml"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = dynmri(
        &["--config", TINY, "--out", "recon", "reconstruct", "--checkpoint", "model/checkpoint.ckpt", "--input", "data/series/subj00_sl0_x30.cirs"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("seconds="));
    assert!(dir.path().join("recon/subj00_sl0_x30_recon.cirs").is_file());

    // a checkpoint for a different architecture is refused
    let desk = dynmri(&["--out", "r2", "reconstruct", "--checkpoint", "model/checkpoint.ckpt", "--input", "data/series/subj00_sl0_x30.cirs"], dir.path());
    assert_eq!(desk.status.code(), Some(2));
}
