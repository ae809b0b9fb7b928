use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stopflow_experiments::record::{RECORD_FILE, TIMING_FILE};
use stopflow_experiments::{ExperimentConfig, ExperimentKind, ResultRecord};

fn stopflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stopflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(cfg.output.dir.is_some());
    }
}

#[test]
fn print_schema_exits_zero() {
    let out = stopflow(&["--print-schema"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"kind\""));
    assert!(text.contains("delta_values"));
}

#[test]
fn passing_run_writes_files_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = stopflow(&["gbm-delay", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [RECORD_FILE, TIMING_FILE, "gbm_delay.csv"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let record = ResultRecord::load(&out_dir).unwrap();
    assert!(record.passed);
    assert!(record.wall_clock_seconds.is_some());
    assert_eq!(
        record.config_hash,
        ExperimentConfig::default_for(ExperimentKind::GbmDelay).hash()
    );

    let csv = std::fs::read_to_string(out_dir.join("gbm_delay.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta,phi,reduced_value,early_value,expected_tau"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn record_goes_to_stdout_without_output_dir() {
    let out = stopflow(&["convergence"]);
    assert_eq!(out.status.code(), Some(0));
    let record = ResultRecord::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(record.kind, ExperimentKind::Convergence);
}

#[test]
fn assertion_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"kind": "vi-audit", "sweep": {"instances": 3, "perturbations": 5, "candidate": "suboptimal"}}"#,
    );
    let out = stopflow(&[
        "vi-audit",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("criterion `slackness`"), "{stderr}");
    // the failing record is still written and still consistent
    let record = ResultRecord::load(dir.path()).unwrap();
    assert!(!record.passed);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"kind": "convergence", "sweep": {"n_values": []}}"#,
        r#"{"kind": "convergence", "model": {"gbm": {"x0": -1, "mu": 0, "sigma": 0.3, "rho": 0, "a": 1, "T": 1, "N": 4}}}"#,
        r#"{"kind": "convergence", "unknown": 1}"#,
        r#"{"kind": "convergence""#,
        r#"{"kind": "equivalence"}"#,
    ];
    for text in cases {
        let cfg = write_config(dir.path(), text);
        let out = stopflow(&["convergence", "--config", cfg.to_str().unwrap()]);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{text}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = stopflow(&["equivalence", "--max-leaves", "100"]);
    assert_eq!(out.status.code(), Some(2));
    let out = stopflow(&["convergence", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overrides_change_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = write_config(
        dir.path(),
        r#"{"kind": "equivalence", "sweep": {"instances": 5, "control_samples": 2}}"#,
    );
    let cfg = cfg.to_str().unwrap();
    assert_eq!(
        stopflow(&["equivalence", "--config", cfg, "--out", a.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        stopflow(&[
            "equivalence",
            "--config",
            cfg,
            "--out",
            b.to_str().unwrap(),
            "--seed-override",
            "77",
            "--max-leaves",
            "16"
        ])
        .status
        .code(),
        Some(0)
    );
    let ra = ResultRecord::load(&a).unwrap();
    let rb = ResultRecord::load(&b).unwrap();
    assert_ne!(ra.config_hash, rb.config_hash);
    let stopflow_experiments::Results::Equivalence(eq) = rb.results else {
        unreachable!()
    };
    assert!(eq.instances.iter().any(|i| i.key == format!("random-{:020}", 77)));
    assert!(eq.instances.iter().all(|i| i.num_leaves <= 16));
}

#[test]
fn tampered_record_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        stopflow(&["convergence", "--out", dir.path().to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let path = dir.path().join(RECORD_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let row = &mut json["results"]["convergence"]["rows"][2];
    row["value"] = serde_json::json!(row["value"].as_f64().unwrap() + 0.01);
    std::fs::write(&path, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    assert!(ResultRecord::load(dir.path()).is_err());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"kind": "vi-audit", "sweep": {"instances": 5, "perturbations": 10}}"#,
    );
    let mut outputs = Vec::new();
    for run in ["one", "two"] {
        let out = dir.path().join(run);
        let status = stopflow(&[
            "vi-audit",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(status.status.code(), Some(0));
        outputs.push((
            std::fs::read(out.join(RECORD_FILE)).unwrap(),
            std::fs::read(out.join("vi_audit.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}
