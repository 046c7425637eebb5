//! End-to-end tests of the command-line binary: exit codes, error wording,
//! artifact determinism, and the documented oracle values.

use std::path::Path;
use std::process::{Command, Output};

fn backpar(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_backpar"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const LINEAR_CASE: &str = "[case]\nu0 = [[1, 1.0]]\nT = 0.5\n";

#[test]
fn validate_passes_and_prints_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = backpar(&["validate"], dir.path());
    let text = stdout(&out);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(text.contains("all 10 checks passed"), "{text}");
    assert_eq!(text.matches("PASS").count(), 10, "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn forward_matches_the_exact_propagator_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", LINEAR_CASE);

    let run = |out_dir: &str| {
        let out = backpar(&["forward", "--config", &cfg, "--out", out_dir], dir.path());
        assert!(out.status.success(), "stderr: {}", stderr(&out));
        std::fs::read_to_string(dir.path().join(out_dir).join("final_state.csv")).unwrap()
    };
    let a = run("out-a");
    let b = run("out-b");
    assert_eq!(a, b, "identical configs must produce identical files");

    // u0 = first eigenfunction, unit diffusion, no reaction: the final
    // state is e^(-T) times the first eigenfunction.
    let mut lines = a.lines();
    assert_eq!(lines.next().unwrap(), "mode,coefficient");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    let c1: f64 = first[1].parse().unwrap();
    assert!((c1 - (-0.5f64).exp()).abs() < 1e-10, "mode 1: {c1}");
    for line in lines {
        let c: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(c.abs() < 1e-12, "higher modes must vanish: {line}");
    }
}

#[test]
fn missing_time_horizon_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.toml", "[case]\nu0 = [[1, 1.0]]\n");
    let out = backpar(&["forward", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("'T'"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_keys_and_methods_are_rejected_with_guidance() {
    let dir = tempfile::tempdir().unwrap();

    let cfg = write_config(dir.path(), "bad-key.toml", "[case]\nname = \"cubic\"\nwat = 1\n");
    let out = backpar(&["forward", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("wat"), "stderr: {}", stderr(&out));

    let cfg = write_config(
        dir.path(),
        "bad-method.toml",
        "[case]\nname = \"cubic\"\n\n[method]\nname = \"magic\"\n",
    );
    let out = backpar(&["invert", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    let msg = stderr(&out);
    for valid in ["truncation", "qr-clipped", "qr-structural", "naive-backward", "observe-only"]
    {
        assert!(msg.contains(valid), "{msg} should list {valid}");
    }
}

#[test]
fn noiseless_truncation_inversion_recovers_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.toml",
        "[case]\nu0 = [[1, 1.0]]\nT = 0.5\n\n[method]\nname = \"truncation\"\n\n\
         [noise]\ndeltas = [0.0]\ntrials = 1\nt_list = [0.0]\n\n[output]\ndir = \"inv\"\n",
    );
    let out = backpar(&["invert", "--config", &cfg], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("inv/invert.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    let err_sq: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!(err_sq.sqrt() < 1e-6, "t = 0 error {}", err_sq.sqrt());
}

#[test]
fn damped_inversion_reports_rule_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.toml",
        "[case]\nname = \"cubic\"\n\n[method]\nname = \"qr-clipped\"\n\n\
         [noise]\ndeltas = [1e-2]\ntrials = 30\nseed = 7\n\n[output]\ndir = \"inv\"\n",
    );
    let out = backpar(&["invert", "--config", &cfg], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("N = 3"), "{text}");
    assert!(text.contains("beta = 0.7598"), "{text}");
    assert!(text.contains("R_delta = 0.305"), "{text}");
    assert!(text.contains("K_R = 1.279"), "{text}");

    let summary = std::fs::read_to_string(dir.path().join("inv/invert.summary.txt")).unwrap();
    assert!(summary.contains("# effective configuration"), "{summary}");
    assert!(summary.contains("# noise.trials = 30"), "{summary}");
    assert!(summary.contains("derived parameters: N = 3"), "{summary}");
}

#[test]
fn mise_writes_the_schema_and_enforces_trial_floor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.toml",
        "[case]\nu0 = [[1, 1.0]]\nT = 0.5\n\n[method]\nname = \"observe-only\"\n\n\
         [noise]\ndeltas = [1e-2]\ntrials = 40\nseed = 3\n\n[output]\ndir = \"m\"\n",
    );
    let out = backpar(&["mise", "--config", &cfg], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("m/mise-observe-only.csv")).unwrap();
    assert!(
        csv.starts_with("method,delta,t,trials,mise_mean,mise_stderr,envelope,slope,slope_ci\n"),
        "{csv}"
    );
    assert_eq!(csv.lines().count(), 2);

    // trials = 0 is rejected before any computation.
    let out = backpar(&["mise", "--config", &cfg, "--trials", "0"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("trials"), "stderr: {}", stderr(&out));

    // Too few trials for a randomized sweep is rejected too.
    let out = backpar(&["mise", "--config", &cfg, "--trials", "5"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("30"), "stderr: {}", stderr(&out));
}

#[test]
fn illposed_demo_runs_without_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = backpar(
        &["illposed", "--trials", "40", "--seed", "5", "--out", "demo"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("demo/illposed.csv")).unwrap();
    assert!(csv.starts_with("delta,n_stated,n_modes,"), "{csv}");
    // Default grid: four noise levels, one row each.
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn thread_controls_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_backpar"))
        .args(["validate"])
        .env("BACKPAR_THREADS", "not-a-number")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("BACKPAR_THREADS"), "stderr: {}", stderr(&out));

    let out = Command::new(env!("CARGO_BIN_EXE_backpar"))
        .args(["validate", "--threads", "2"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
}
