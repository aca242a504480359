//! End-to-end behaviour of the `shotnoise` binary.

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const BASE: &str = r#"
master_seed = 7
[marks]
kind = "gaussian"
sigma = 1.0
[kernel]
family = "powerlaw"
alpha = 3.5
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("c.toml");
    if !cfg.exists() {
        std::fs::write(&cfg, BASE).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_shotnoise"))
        .current_dir(dir)
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .args(["--out", "out"])
        .env_remove("SHOTNOISE_THREADS")
        .output()
        .unwrap()
}

#[test]
fn mills_prints_ratio_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["mills"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mills_ratio = 1.253314"), "{stdout}");

    let dir = tmp.path().join("out/mills");
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema_version"], 1);
    let digest = manifest["config_digest"].as_str().unwrap().to_string();
    for a in manifest["artifacts"].as_array().unwrap() {
        let bytes = std::fs::read(dir.join(a["file"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert_eq!(a["bytes"].as_u64().unwrap() as usize, bytes.len());
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains(&digest), "{} lacks the digest", a["file"]);
    }
    let csv = std::fs::read_to_string(dir.join("mills.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("x,survival,bound,holds"));

    // Nothing is written outside the output directory.
    let mut entries: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();
    assert_eq!(entries, ["c.toml", "out"]);
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["mills", "--set", "bogus=1"][..],
        &["mills", "--set", "marks.kind=\"rademacher\""][..],
        &["level-sweep", "--set", "kernel.alpha=2.5"][..],
        &["eta-sweep", "--set", "eta_sweep.etas=[0.0,0.7]"][..],
        &["mills", "--threads", "0"][..],
    ] {
        let out = run(tmp.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn failed_check_exits_4() {
    // Five grid points over ±8 sd cannot integrate the density to 1.
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        tmp.path(),
        &["density", "--set", "density.samples=0", "--set", "density.half_points=2"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("out/density/result.json")).unwrap()).unwrap();
    assert!(result["checks"].as_array().unwrap().iter().any(|c| c["passed"] == false));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["selfdual", "--set", "selfdual.scales=[6.0]", "--set", "trials=30"];
    let one = run(tmp.path(), &[&args[..], &["--threads", "1"]].concat());
    assert_eq!(one.status.code(), Some(0));
    let a = std::fs::read(tmp.path().join("out/selfdual/selfdual.csv")).unwrap();
    let other = Command::new(env!("CARGO_BIN_EXE_shotnoise"))
        .current_dir(tmp.path())
        .args(args)
        .args(["--config", "c.toml", "--out", "out"])
        .env("SHOTNOISE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(other.status.code(), Some(0));
    assert_eq!(a, std::fs::read(tmp.path().join("out/selfdual/selfdual.csv")).unwrap());
}
