use std::fs;
use std::process::Command;

use ovalflow::io::{load_run, parse_config, read_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ovalflow"))
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"kind":"cylinder","foo":1}"#).unwrap();
    let out = bin().args(["bryant", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("foo"));
    fs::write(&cfg, "{\"N\": 128,\n \"cfl\" 0.2}").unwrap();
    let out = bin().args(["bryant", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(bin().arg("no-such-command").output().unwrap().status.code(), Some(2));
}

#[test]
fn simulate_writes_a_loadable_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"kind":"perturbed_cylinder","N":128,"tau_init":-12,"tau_end":-10,"output_dir":"runs/a"}"#).unwrap();
    let out = bin().arg("simulate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (m, states) = load_run(&dir.path().join("runs/a/manifest.json")).unwrap();
    assert_eq!(m.config, parse_config(&cfg).unwrap());
    assert_eq!(states.len(), 3);
    assert!((states[2].tau + 10.0).abs() < 1e-12);
    let t = read_csv(&dir.path().join("runs/a/snapshot_0000.csv")).unwrap();
    assert_eq!(t.config_hash, m.config_sha256);
    assert_eq!(t.header, vec!["sigma", "u"]);
}

#[test]
fn quick_suite_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, threads) in [("a", "1"), ("b", "3")] {
        let out = bin().args(["suite", "quick", "--threads", threads, "--out"]).arg(dir.path().join(sub)).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(dir.path().join("a/suite_quick.json")).unwrap();
    let b = fs::read(dir.path().join("b/suite_quick.json")).unwrap();
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["criteria"].as_array().unwrap().len(), 6);
}

#[test]
fn reports_are_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, seed: &str| {
        let out = bin().args(["spectral-check", "--seed", seed, "--out"]).arg(dir.path().join(sub)).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        fs::read(dir.path().join(sub).join("spectral.json")).unwrap()
    };
    assert_eq!(run("a", "11"), run("b", "11"));
    assert_ne!(run("a", "11"), run("c", "12"));
}

#[test]
fn failing_estimates_exit_1_with_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("diagnostics").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let t = read_csv(&dir.path().join("diagnostics_nodes.csv")).unwrap();
    assert_eq!(t.header[0], "sigma");
    assert!(t.rows.len() > 100);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(v["report"]["shape"], "oval");
}
