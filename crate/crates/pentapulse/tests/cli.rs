//! End-to-end checks of the command-line surface: exit codes, validation
//! output, and artifact layout.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> PathBuf {
    let mut path = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    path.pop();
    path.pop();
    path.push("target");
    path.push(if cfg!(debug_assertions) { "debug" } else { "release" });
    path.push("pentapulse");
    path
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pentapulse-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn eigen_scenario_produces_artifacts() {
    let out = tmp_dir("eigen");
    let status = Command::new(binary())
        .args(["eigen", "--config"])
        .arg(scenario("fig2_eigen"))
        .arg("--out")
        .arg(&out)
        .status()
        .expect("binary runs");
    assert!(status.success());
    assert!(out.join("eigen.csv").exists());
    assert!(out.join("summary.json").exists());
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"expectations_met\": true"), "{summary}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn malformed_config_exits_one_with_error_list() {
    let out = tmp_dir("bad");
    let cfg = out.join("bad.json");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(&cfg, "{}").unwrap();
    let output = Command::new(binary())
        .args(["eigen", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("experiment"), "{stderr}");
    assert!(stderr.contains("pulses"), "{stderr}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn subcommand_must_match_experiment() {
    let out = tmp_dir("mismatch");
    let output = Command::new(binary())
        .args(["store", "--config"])
        .arg(scenario("fig2_eigen"))
        .arg("--out")
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn check_adiabatic_exit_codes() {
    let out = tmp_dir("adiabatic");
    std::fs::create_dir_all(&out).unwrap();

    let good = r#"{
        "experiment": "check-adiabatic",
        "scheme": "m-type",
        "pulses": [
            {"kind": "gaussian", "amplitude": 30.0, "width_factor": 0.25, "center": 0.0},
            {"kind": "gaussian", "amplitude": 30.0, "width_factor": 1.0, "center": -0.5},
            {"kind": "gaussian", "amplitude": 30.0, "width_factor": 1.0, "center": 0.5},
            {"kind": "gaussian", "amplitude": 30.0, "width_factor": 0.25, "center": 0.0}
        ],
        "detunings": [10.0, 10.0, 10.0, 10.0],
        "grid": {"tau_min": -8.0, "tau_max": 8.0, "n_tau": 101, "x_max": 0.0, "n_x": 1}
    }"#;
    let cfg = out.join("good.json");
    std::fs::write(&cfg, good).unwrap();
    let status = Command::new(binary())
        .args(["check-adiabatic", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(out.join("good"))
        .status()
        .expect("binary runs");
    assert_eq!(status.code(), Some(0));

    let bad = good.replace("[10.0, 10.0, 10.0, 10.0]", "[0.1, 0.1, 0.1, 0.1]");
    let cfg = out.join("bad.json");
    std::fs::write(&cfg, bad).unwrap();
    let status = Command::new(binary())
        .args(["check-adiabatic", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(out.join("bad"))
        .status()
        .expect("binary runs");
    assert_eq!(status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn sweep_fans_out_isolated_directories() {
    let out = tmp_dir("sweep");
    let status = Command::new(binary())
        .args(["eigen", "--config"])
        .arg(scenario("fig2_eigen"))
        .arg("--out")
        .arg(&out)
        .args(["--sweep", "/pulses/1/amplitude:25:35:3"])
        .status()
        .expect("binary runs");
    assert!(status.success());
    for k in 0..3 {
        assert!(out.join(format!("sweep_{k:03}")).join("summary.json").exists());
    }
    let _ = std::fs::remove_dir_all(&out);
}
