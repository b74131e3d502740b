use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wban(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wban")).args(args).output().expect("binary runs")
}

fn bundled(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn energy_writes_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("energy.csv");
    let out = wban(&["energy", "--output", path_str(&csv)]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("protocol,"));
    assert!(lines[1].starts_with("BLE,"));
    assert!(lines[2].starts_with("CryptoCoP,"));
    assert!(lines[3].starts_with("BLE LWAA,") && lines[3].ends_with(",444.43,130,3.9%"));
    assert!(lines[4].starts_with("ZigBee,") && lines[4].ends_with(",987.78,58,130.9%"));
    assert!(stdout(&out).contains("424 / 384 bits on air"));
}

#[test]
fn energy_with_only_encryption_cost() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.toml");
    fs::write(&cfg, "[cost_model]\ntx_per_bit = 0.0\nrx_per_bit = 0.0\nper_cycle = 0.0\n").unwrap();
    let csv = dir.path().join("energy.csv");
    let out = wban(&["energy", "--output", path_str(&csv), "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(0));
    for line in fs::read_to_string(&csv).unwrap().lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[12], "38.00", "{line}");
    }
}

#[test]
fn energy_unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("missing").join("energy.csv");
    assert_eq!(wban(&["energy", "--output", path_str(&csv)]).status.code(), Some(2));
}

#[test]
fn simulate_honest_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = wban(&["simulate", "--config", &bundled("honest.toml"), "--output", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("accepted: 300 (100.0%)"));
    assert!(dir.path().join("report.jsonl").exists());
    let ledger = fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 301);
}

#[test]
fn simulate_mitm_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = wban(&["simulate", "--config", &bundled("mitm.toml"), "--output", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("accepted: 0 (0.0%)"), "{text}");
    assert!(text.contains("rejected verifier_mismatch: 100"), "{text}");
    assert_eq!(text.matches("rejected ").count(), 1, "{text}");
}

#[test]
fn simulate_desync_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = wban(&["simulate", "--config", &bundled("desync.toml"), "--output", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("recoveries: 3"));
}

#[test]
fn simulate_malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "sessions = \"many\"\n").unwrap();
    let out = wban(&["simulate", "--config", path_str(&cfg), "--output", path_str(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sessions"));

    fs::write(&cfg, "sessions = 5\nloss_sessions = [7]\n").unwrap();
    let out = wban(&["simulate", "--config", path_str(&cfg), "--output", path_str(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_seed_override_changes_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, sub: &str| -> PathBuf {
        let out_dir = dir.path().join(sub);
        let out = wban(&["simulate", "--config", &bundled("desync.toml"), "--output", path_str(&out_dir), "--seed", seed]);
        assert_eq!(out.status.code(), Some(0));
        out_dir.join("report.jsonl")
    };
    let a = fs::read(run("1", "a")).unwrap();
    let b = fs::read(run("2", "b")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn attack_verdicts() {
    let replay = wban(&["attack", "replay"]);
    assert_eq!(replay.status.code(), Some(0));
    assert!(stdout(&replay).contains("20/20 rejected"));

    let surveillor = wban(&["attack", "surveillor"]);
    assert_eq!(surveillor.status.code(), Some(0));
    let text = stdout(&surveillor);
    assert!(text.contains("linkability lwaa: 0.000"), "{text}");
    assert!(text.contains("linkability legacy: 0.999"), "{text}");

    let desync = wban(&["attack", "desync", "--seed", "9"]);
    assert_eq!(desync.status.code(), Some(0));
    assert!(stdout(&desync).contains("recovered: yes"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(wban(&["attack", "wormhole"]).status.code(), Some(2));
    assert_eq!(wban(&["energy"]).status.code(), Some(2));
    assert_eq!(wban(&["energy", "--output", "x.csv", "--verbose"]).status.code(), Some(2));
    assert_eq!(wban(&["frobnicate"]).status.code(), Some(2));
}
