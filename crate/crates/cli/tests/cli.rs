//! End-to-end checks of the command-line surface: files, determinism,
//! error handling, and the stability of the metrics record schema.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_safe-imm"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin()
        .args(args)
        .env("SAFE_IMM_OUTPUT_DIR", dir)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn simulate_writes_expected_rows_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["simulate"], dir.path());
    let truth = std::fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    // Header plus 300 steps x 3 targets.
    assert_eq!(truth.lines().count(), 1 + 300 * 3);
    assert!(dir.path().join("measurements.csv").exists());

    let dir2 = tempfile::tempdir().unwrap();
    run_ok(&["simulate"], dir2.path());
    let truth2 = std::fs::read_to_string(dir2.path().join("truth.csv")).unwrap();
    assert_eq!(truth, truth2, "same seed must give identical files");

    let dir3 = tempfile::tempdir().unwrap();
    run_ok(&["simulate", "--seed", "7"], dir3.path());
    let truth3 = std::fs::read_to_string(dir3.path().join("truth.csv")).unwrap();
    assert_ne!(truth, truth3);
}

#[test]
fn missing_config_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate", "--config", "/nonexistent/config.toml"])
        .env("SAFE_IMM_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cannot read config"), "stderr: {stderr}");
}

#[test]
fn malformed_config_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[gate\nepsilon = 0.5\n").unwrap();
    let out = bin()
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("SAFE_IMM_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("malformed config") && stderr.contains("line 1"),
        "stderr: {stderr}"
    );

    // Wrong field name: rejected with the field path.
    std::fs::write(&cfg, "[gate]\nepsilonn = 0.5\n").unwrap();
    let out = bin()
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("SAFE_IMM_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("invalid config field"), "stderr: {stderr}");
}

#[test]
fn track_emits_metrics_record_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["track", "--override", "scenario.duration=8"], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("compliance 100.0%"), "stdout: {stdout}");

    let metrics = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    let parsed: toml::Table = metrics.parse().expect("metrics record is valid TOML");
    assert_eq!(parsed["schema_version"].as_integer(), Some(1));
    // One RMSE pair per target.
    for t in 0..3 {
        assert!(parsed.contains_key(&format!("target_{t}_rmse_x")));
        assert!(parsed.contains_key(&format!("target_{t}_rmse_y")));
    }
    assert_eq!(parsed["compliance_pct"].as_float(), Some(100.0));
    assert!(parsed["fired_steps"].as_integer().unwrap() > 0);

    assert!(dir.path().join("tracks_seed1.csv").exists());
    let audit = std::fs::read_to_string(dir.path().join("gate_audit_seed1.csv")).unwrap();
    assert!(audit.lines().next().unwrap().contains("actual_drift"));
    assert!(audit.lines().count() > 100);
}

#[test]
fn gate_disabled_variant_emits_zero_wta_events() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &[
            "track",
            "--override",
            "scenario.duration=8",
            "--override",
            "tracker.kind=imm_mixture_only",
        ],
        dir.path(),
    );
    let metrics = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    let parsed: toml::Table = metrics.parse().unwrap();
    assert_eq!(parsed["fired_steps"].as_integer(), Some(0));
}

#[test]
fn track_runs_are_reproducible_across_invocations() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    for dir in [&dir1, &dir2] {
        run_ok(
            &["track", "--override", "scenario.duration=8", "--seed", "11"],
            dir.path(),
        );
    }
    let a = std::fs::read_to_string(dir1.path().join("tracks_seed11.csv")).unwrap();
    let b = std::fs::read_to_string(dir2.path().join("tracks_seed11.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablate_covers_the_full_grid_with_shared_seeds() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &[
            "ablate",
            "--override",
            "scenario.duration=5",
            "--override",
            "run.seeds=[1, 2]",
        ],
        dir.path(),
    );
    let table = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let mut rows = table.lines();
    let header = rows.next().unwrap();
    assert!(header.contains("max_excursion"));
    let body: Vec<&str> = rows.collect();
    assert_eq!(body.len(), 8, "2 gates x 2 likelihoods x 2 TPM modes");
    // Gate on/off pairs share sim seeds, so ungated drift maxima coincide.
    let field = |row: &str, idx: usize| row.split(',').nth(idx).unwrap().to_string();
    for on_row in body.iter().filter(|r| r.starts_with("on,")) {
        let suffix = on_row.strip_prefix("on,").unwrap();
        let (lik, tpm) = {
            let mut it = suffix.split(',');
            (
                it.next().unwrap().to_string(),
                it.next().unwrap().to_string(),
            )
        };
        let off_row = body
            .iter()
            .find(|r| r.starts_with(&format!("off,{lik},{tpm}")))
            .expect("paired cell");
        assert_eq!(field(on_row, 9), field(off_row, 9), "max_excursion paired");
    }
}

#[test]
fn bench_report_is_valid_structured_output() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["bench"], dir.path());
    let report = std::fs::read_to_string(dir.path().join("bench.txt")).unwrap();
    let parsed: toml::Table = report.parse().expect("bench record is valid TOML");
    assert_eq!(parsed["schema_version"].as_integer(), Some(1));
    assert!(parsed["imm_steps_per_sec"].as_float().unwrap() > 0.0);
    assert!(parsed["imm_step_p99_us"].as_float().unwrap() > 0.0);
    for count in [1, 3, 10, 30, 100] {
        assert!(parsed.contains_key(&format!("tracker_{count}_targets_fps")));
    }
}

#[test]
fn zero_epsilon_never_fires() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &[
            "track",
            "--override",
            "scenario.duration=8",
            "--override",
            "gate.epsilon=0.0",
        ],
        dir.path(),
    );
    let metrics = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    let parsed: toml::Table = metrics.parse().unwrap();
    assert_eq!(parsed["fired_steps"].as_integer(), Some(0));
}
