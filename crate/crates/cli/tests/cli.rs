use std::path::Path;
use std::process::{Command, Output};

fn weak_sde(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weak-sde")).args(args).current_dir(cwd).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const TINY: &str = "[sim]\nn_traj = 1\nn_steps = 10\n";

const SMALL: &str = r#"
[sim]
n_traj = 10
n_steps = 20000

[diagnostics]
acf_steps = 20000
acf_scatter_pairs = 3
"#;

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "tiny.toml", TINY);
    for out in ["a", "b"] {
        let o = weak_sde(&["simulate", "--config", "tiny.toml", "--seed", "5", "--output", out, "--csv"], dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["ensemble.wgen", "ensemble.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("a/ensemble.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "traj_id,step,x");
    assert_eq!(lines.len(), 12);
    assert!(dir.path().join("a/provenance.json").exists());

    let other = weak_sde(&["simulate", "--config", "tiny.toml", "--seed", "6", "--output", "c"], dir.path());
    assert_eq!(code(&other), 0);
    assert_ne!(
        std::fs::read(dir.path().join("a/ensemble.wgen")).unwrap(),
        std::fs::read(dir.path().join("c/ensemble.wgen")).unwrap()
    );
}

#[test]
fn resolved_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "tiny.toml", TINY);
    assert_eq!(code(&weak_sde(&["simulate", "--config", "tiny.toml", "--seed", "9", "--output", "o"], dir.path())), 0);
    let echoed = std::fs::read_to_string(dir.path().join("o/config.toml")).unwrap();
    let back: toml::Table = toml::from_str(&echoed).unwrap();
    assert_eq!(back["sim"]["master_seed"].as_integer(), Some(9));
    assert_eq!(back["sim"]["n_steps"].as_integer(), Some(10));
    // the echo is itself a valid config
    let again = weak_sde(&["simulate", "--config", "o/config.toml", "--output", "p"], dir.path());
    assert_eq!(code(&again), 0);
    assert_eq!(
        std::fs::read(dir.path().join("o/ensemble.wgen")).unwrap(),
        std::fs::read(dir.path().join("p/ensemble.wgen")).unwrap()
    );
}

#[test]
fn invalid_configs_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "zero.toml", "[sim]\ndt = 0.0\n");
    write(dir.path(), "typo.toml", "[sim]\nn_stepz = 3\n");
    for args in [
        vec!["simulate", "--config", "zero.toml"],
        vec!["simulate", "--config", "typo.toml"],
        vec!["simulate", "--preset", "nope"],
        vec!["noise-scaling", "--dt", "-0.1"],
        vec!["no-such-command"],
    ] {
        let o = weak_sde(&args, dir.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn empty_ensemble_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "empty.wgen", "");
    write(dir.path(), "empty.csv", "traj_id,step,x\n");
    for f in ["empty.wgen", "empty.csv"] {
        let o = weak_sde(&["discover", "--preset", "ou", "--ensemble", f, "--output", "d"], dir.path());
        assert_ne!(code(&o), 0, "{f}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("ensemble input"));
        assert!(!dir.path().join("d/model.json").exists());
    }
}

#[test]
fn discover_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "small.toml", SMALL);
    assert_eq!(code(&weak_sde(&["simulate", "--config", "small.toml", "--output", "sim"], dir.path())), 0);
    let o = weak_sde(
        &["discover", "--config", "small.toml", "--ensemble", "sim/ensemble.wgen", "--output", "disc"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // simulating inside discover gives the same model as reading the file
    let direct = weak_sde(&["discover", "--config", "small.toml", "--output", "direct"], dir.path());
    assert_eq!(code(&direct), 0);
    assert_eq!(
        std::fs::read(dir.path().join("disc/model.json")).unwrap(),
        std::fs::read(dir.path().join("direct/model.json")).unwrap()
    );

    let v = weak_sde(
        &["validate", "--model", "disc/model.json", "--config", "small.toml", "--output", "val"],
        dir.path(),
    );
    assert_eq!(code(&v), 0, "{}", String::from_utf8_lossy(&v.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("val/validation.json")).unwrap()).unwrap();
    let tv = summary["tv"].as_f64().unwrap();
    assert!(tv > 0.0 && tv < 0.1, "tv {tv}");
    assert_eq!(summary["false_positive"], false);
    assert!(dir.path().join("val/density.csv").exists());
}

#[test]
fn uncorrected_run_is_marked() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "small.toml", SMALL);
    let o = weak_sde(&["discover", "--config", "small.toml", "--no-bias-correction", "--output", "u"], dir.path());
    assert_eq!(code(&o), 0);
    let report = std::fs::read_to_string(dir.path().join("u/report.txt")).unwrap();
    assert!(report.contains("UNCORRECTED"));
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("u/model.json")).unwrap()).unwrap();
    assert_eq!(model["bias_corrected"], false);
}

#[test]
fn validate_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "small.toml", SMALL);
    // the OU preset stores σ² as computed from σ = 0.7
    let truth = serde_json::json!({
        "drift_coeffs": [0.0, -1.0, 0.0, 0.0, 0.0],
        "diff_coeffs": [0.7f64 * 0.7, 0.0, 0.0, 0.0, 0.0],
        "library": {"max_degree": 4},
    });
    write(dir.path(), "truth.json", &truth.to_string());
    let o = weak_sde(&["validate", "--model", "truth.json", "--config", "small.toml", "--output", "v"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v/validation.json")).unwrap()).unwrap();
    assert_eq!(summary["tv"].as_f64(), Some(0.0));
    assert_eq!(summary["acf_max_gap"].as_f64(), Some(0.0));

    write(dir.path(), "short.json", r#"{"drift_coeffs":[0,-1],"diff_coeffs":[0.49,0],"library":{"max_degree":1}}"#);
    let bad = weak_sde(&["validate", "--model", "short.json", "--config", "small.toml", "--output", "w"], dir.path());
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("library"));

    write(dir.path(), "ragged.json", r#"{"drift_coeffs":[0,-1],"diff_coeffs":[0.49,0,0,0,0],"library":{"max_degree":4}}"#);
    let ragged = weak_sde(&["validate", "--model", "ragged.json", "--config", "small.toml"], dir.path());
    assert_ne!(code(&ragged), 0);
}

#[test]
fn noise_scaling_single_step_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = weak_sde(&["noise-scaling", "--dt", "0.01", "--snr", "10", "--output", "ns"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ns/noise_scaling.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "dt,km_snr10,wf_snr10,ratio_snr10");
    let echoed: toml::Table = toml::from_str(&std::fs::read_to_string(dir.path().join("ns/config.toml")).unwrap()).unwrap();
    assert_eq!(echoed["dt_grid"].as_array().unwrap().len(), 1);
}

#[test]
fn noise_scaling_default_grid_with_plot() {
    let dir = tempfile::tempdir().unwrap();
    let o = weak_sde(&["noise-scaling", "--output", "ns", "--plots"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(dir.path().join("ns/noise_scaling.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32);
    assert!(std::fs::read_to_string(dir.path().join("ns/noise_scaling.svg")).unwrap().starts_with("<svg"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ns/summary.json")).unwrap()).unwrap();
    for s in summary["ratio_slopes"].as_array().unwrap() {
        assert!((s.as_f64().unwrap() + 1.5).abs() < 1e-9);
    }
}
