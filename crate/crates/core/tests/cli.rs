//! End-to-end checks of the command-line interface: artifact layout, exit
//! codes, diagnostics and rerun idempotence. Uses a micro configuration so
//! each invocation finishes in well under a second.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use esd_pinn::config::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_esd-pinn"))
}

fn micro_config(out_dir: &Path) -> RunConfig {
    let mut config = RunConfig::desk_default();
    config.t_span = (0.0, 1.0);
    config.n_points = 60;
    config.network.hidden_layers = 1;
    config.network.hidden_width = 8;
    config.training.max_epochs = 40;
    config.training.checkpoint_every = 0;
    config.output.dir = out_dir.to_path_buf();
    config
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn run_ok(args: &[&str], extra: &[&PathBuf]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for p in extra {
        cmd.arg(p);
    }
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn integrate_writes_csv_and_is_idempotent() {
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let config_path = write_config(temp.path(), &micro_config(&out_dir));

    run_ok(&["integrate", "--config"], &[&config_path]);
    let csv_path = out_dir.join("rk45.csv");
    let first = std::fs::read(&csv_path).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(text.starts_with("t,x1,x2,x3,x4\n"));
    assert_eq!(text.lines().count(), 61); // header + one row per grid time

    run_ok(&["integrate", "--config"], &[&config_path]);
    let second = std::fs::read(&csv_path).unwrap();
    assert_eq!(first, second);
}

#[test]
fn integrate_rejects_inverted_span_before_writing() {
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let mut config = micro_config(&out_dir);
    config.t_span = (1.0, 0.0);
    let config_path = write_config(temp.path(), &config);

    let out = bin().args(["integrate", "--config"]).arg(&config_path).output().unwrap();
    assert!(!out.status.success());
    assert!(!out_dir.exists(), "output directory must stay untouched");
}

#[test]
fn train_artifacts_and_seed_determinism() {
    let temp = tempfile::tempdir().unwrap();
    let out_a = temp.path().join("a");
    let out_b = temp.path().join("b");
    let config_a = write_config(&temp.path().join("."), &micro_config(&out_a));
    run_ok(&["train", "--config"], &[&config_a]);
    for artifact in ["history.csv", "checkpoint.json", "pinn.csv"] {
        assert!(out_a.join(artifact).exists(), "{artifact} missing");
    }

    // Same config, different out dir: byte-identical history and prediction.
    let config_b_path = temp.path().join("config_b.json");
    let mut config_b = micro_config(&out_b);
    config_b.output.dir = out_b.clone();
    std::fs::write(&config_b_path, serde_json::to_string_pretty(&config_b).unwrap()).unwrap();
    run_ok(&["train", "--config"], &[&config_b_path]);
    assert_eq!(
        std::fs::read(out_a.join("history.csv")).unwrap(),
        std::fs::read(out_b.join("history.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(out_a.join("pinn.csv")).unwrap(),
        std::fs::read(out_b.join("pinn.csv")).unwrap()
    );

    // A different seed must give a different history.
    let out = bin()
        .args(["train", "--config"])
        .arg(&config_b_path)
        .args(["--seed", "7"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(
        std::fs::read(out_a.join("history.csv")).unwrap(),
        std::fs::read(out_b.join("history.csv")).unwrap()
    );
}

#[test]
fn resume_extends_history_contiguously() {
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let mut config = micro_config(&out_dir);
    config.training.max_epochs = 3;
    let config_path = write_config(temp.path(), &config);
    run_ok(&["train", "--config"], &[&config_path]);

    // Extend the budget and resume from the stored checkpoint.
    config.training.max_epochs = 6;
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    run_ok(&["train", "--config"], &[&config_path]);
    // That fresh run rewrote history; redo the short run to set up resume.
    config.training.max_epochs = 3;
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    run_ok(&["train", "--config"], &[&config_path]);
    config.training.max_epochs = 6;
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    run_ok(&["train", "--resume", "--config"], &[&config_path]);

    let history = std::fs::read_to_string(out_dir.join("history.csv")).unwrap();
    let epochs: Vec<&str> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(epochs, vec!["1", "2", "3", "4", "5", "6"]);
}

#[test]
fn resume_without_checkpoint_fails() {
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let config_path = write_config(temp.path(), &micro_config(&out_dir));
    let out = bin()
        .args(["train", "--config"])
        .arg(&config_path)
        .arg("--resume")
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn evaluate_identical_files_are_perfect() {
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let config_path = write_config(temp.path(), &micro_config(&out_dir));
    run_ok(&["integrate", "--config"], &[&config_path]);
    let rk = out_dir.join("rk45.csv");

    let out = bin()
        .arg("evaluate")
        .arg(&rk)
        .arg(&rk)
        .arg("--config")
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    for component in ["x1", "x2", "x3", "x4"] {
        assert_eq!(report["metrics"][component]["r2"], 1.0);
        assert_eq!(report["metrics"][component]["mae"], 0.0);
    }
}

#[test]
fn evaluate_reports_malformed_row_and_grid_mismatch() {
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let config_path = write_config(temp.path(), &micro_config(&out_dir));
    run_ok(&["integrate", "--config"], &[&config_path]);
    let rk = out_dir.join("rk45.csv");

    // Corrupt one row.
    let text = std::fs::read_to_string(&rk).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "0.5,not_a_number,0,0,0";
    let bad = out_dir.join("bad.csv");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let out = bin()
        .arg("evaluate")
        .arg(&rk)
        .arg(&bad)
        .arg("--config")
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 6"), "{stderr}");

    // Shift the grid of a copy.
    let shifted_text: String = std::iter::once("t,x1,x2,x3,x4".to_string())
        .chain(std::fs::read_to_string(&rk).unwrap().lines().skip(1).map(|l| {
            let mut fields: Vec<String> = l.split(',').map(String::from).collect();
            let t: f64 = fields[0].parse().unwrap();
            fields[0] = format!("{:.16e}", t + 0.001);
            fields.join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n");
    let shifted = out_dir.join("shifted.csv");
    std::fs::write(&shifted, shifted_text).unwrap();
    let out = bin()
        .arg("evaluate")
        .arg(&rk)
        .arg(&shifted)
        .arg("--config")
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("grids differ at index 0"), "{stderr}");
}

#[test]
fn evaluate_with_checkpoint_prints_exact_tangent_diagnostic() {
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let config_path = write_config(temp.path(), &micro_config(&out_dir));
    run_ok(&["integrate", "--config"], &[&config_path]);
    run_ok(&["train", "--config"], &[&config_path]);
    let out = bin()
        .arg("evaluate")
        .arg(out_dir.join("rk45.csv"))
        .arg(out_dir.join("pinn.csv"))
        .arg("--config")
        .arg(&config_path)
        .arg("--checkpoint")
        .arg(out_dir.join("checkpoint.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("exact tangents"), "{stdout}");
}

#[test]
fn full_run_dry_run_touches_nothing() {
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let config_path = write_config(temp.path(), &micro_config(&out_dir));
    let out = run_ok(&["full-run", "--dry-run", "--config"], &[&config_path]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("config ok"));
    assert!(!out_dir.exists());
}

#[test]
fn full_run_produces_summary_line() {
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let config_path = write_config(temp.path(), &micro_config(&out_dir));
    let out = run_ok(&["full-run", "--config"], &[&config_path]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary = stdout.lines().find(|l| l.starts_with("R2:")).unwrap();
    assert!(summary.contains("x1=") && summary.contains("x4="), "{summary}");
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = bin().arg("full-run").output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--config"), "{stderr}");

    let out = bin()
        .args(["full-run", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn bundled_profiles_parse_and_match_defaults() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let configs = manifest.join("../../configs");
    let desk = RunConfig::load(&configs.join("desk.json")).unwrap();
    assert_eq!(desk, RunConfig::desk_default());
    let full = RunConfig::load(&configs.join("full.json")).unwrap();
    assert_eq!(full, RunConfig::full_scale());
    assert_eq!(full.n_points, 20_000);
    assert_eq!(full.training.max_epochs, 175_000);
}

#[test]
fn integrate_bundled_full_profile_writes_whole_grid() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let config = manifest.join("../../configs/full.json");
    let temp = tempfile::tempdir().unwrap();
    let out_dir = temp.path().join("out");
    let out = bin()
        .args(["integrate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("rk45.csv")).unwrap();
    assert_eq!(text.lines().count(), 20_001); // header + 20,000 rows
    assert!(text.starts_with("t,x1,x2,x3,x4\n"));
}
