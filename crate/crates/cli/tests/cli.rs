use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use hmc_lab_cli::{parse_config, run_experiment, RunError};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn load(name: &str) -> hmc_lab_cli::ExperimentConfig {
    parse_config(&fs::read_to_string(config_path(name)).unwrap()).unwrap()
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hmc-lab"));
    cmd.env_remove(hmc_lab_cli::OUTPUT_DIR_ENV);
    cmd
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for entry in fs::read_dir(config_path("")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = parse_config(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        assert_eq!(parse_config(&hmc_lab_cli::serialize_config(&cfg)).unwrap(), cfg);
    }
}

#[test]
fn minimal_sample_writes_ten_rows_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sample", "--config"])
        .arg(config_path("minimal.toml"))
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("chain_id,step,x_0,x_1"));
    assert_eq!(lines.count(), 10);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout, fs::read_to_string(dir.path().join("summary.csv")).unwrap());
    assert!(stdout.starts_with("metric,value\n"));
}

#[test]
fn couple_at_quarter_period_coalesces_in_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&load("couple_spherical.toml"), dir.path(), false).unwrap();
    assert!(report.passed());
    let csv = fs::read_to_string(dir.path().join("coupled.csv")).unwrap();
    assert!(csv.starts_with("rep,step,distance,dist_0,"));
    let steps = column(&csv, "step");
    let dist = column(&csv, "distance");
    for (k, d) in steps.iter().zip(&dist) {
        if *k == 0.0 {
            assert!(*d > 0.1);
        } else {
            assert!(*d <= 1e-10, "step {k}: {d}");
        }
    }
}

#[test]
fn integrate_check_reports_unit_jacobian() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&load("integrate_leapfrog.toml"), dir.path(), false).unwrap();
    assert_eq!(report.exit_code(), 0);
    let dev = report.metric("jacobian_det_deviation_max").unwrap();
    assert!(dev <= 1e-5, "{dev}");
    let dets = column(&fs::read_to_string(dir.path().join("integrate.csv")).unwrap(), "jacobian_det");
    assert_eq!(dets.len(), 16);
    assert!(dets.iter().all(|d| (d - 1.0).abs() <= 1e-5));
}

#[test]
fn existing_outputs_are_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load("minimal.toml");
    run_experiment(&cfg, dir.path(), false).unwrap();
    let before = fs::read(dir.path().join("trajectory.csv")).unwrap();
    assert!(matches!(
        run_experiment(&cfg, dir.path(), false),
        Err(RunError::WouldOverwrite(_))
    ));
    let status = bin()
        .args(["sample", "--config"])
        .arg(config_path("minimal.toml"))
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert_eq!(fs::read(dir.path().join("trajectory.csv")).unwrap(), before);
    run_experiment(&cfg, dir.path(), true).unwrap();
}

#[test]
fn identical_config_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = load("couple_perturbed.toml");
    cfg.sampler.k = Some(20);
    for dir in [&a, &b] {
        run_experiment(&cfg, dir.path(), false).unwrap();
    }
    for file in ["coupled.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap());
    }
    cfg.sampler.seed = Some(12);
    let c = tempfile::tempdir().unwrap();
    run_experiment(&cfg, c.path(), false).unwrap();
    assert_ne!(
        fs::read(a.path().join("coupled.csv")).unwrap(),
        fs::read(c.path().join("coupled.csv")).unwrap()
    );
}

#[test]
fn seed_flag_and_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, sub: &str| {
        let out = bin()
            .args(["sample", "--overwrite", "--seed", seed, "--config"])
            .arg(config_path("minimal.toml"))
            .env(hmc_lab_cli::OUTPUT_DIR_ENV, dir.path().join(sub))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        fs::read(dir.path().join(sub).join("trajectory.csv")).unwrap()
    };
    assert_eq!(run("5", "a"), run("5", "b"));
    assert_ne!(run("5", "a"), run("6", "c"));
}

#[test]
fn failing_expectation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config_path("minimal.toml")).unwrap()
        + "\n[[expectations]]\nmetric = \"chains\"\ncomparator = \">\"\nthreshold = 5.0\n\
           \n[[expectations]]\nmetric = \"no_such_metric\"\ncomparator = \"<\"\nthreshold = 1.0\n";
    let cfg_path = dir.path().join("fail.toml");
    fs::write(&cfg_path, text).unwrap();
    let out = bin()
        .args(["sample", "--config"])
        .arg(&cfg_path)
        .arg("--output-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("[FAIL] chains") && stderr.contains("[FAIL] no_such_metric"), "{stderr}");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let mismatch = bin()
        .args(["couple", "--config"])
        .arg(config_path("minimal.toml"))
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("does not match"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "experiment = \"sample\"\n[potential]\nkind = \"spherical_quadratic\"\ndim = 2\n[sampler]\nsampler = \"rwm\"\neta = -1.0\n").unwrap();
    let out = bin().args(["sample", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sampler.eta") && stderr.contains("sampler.k"), "{stderr}");
}

#[test]
fn convergence_decays_from_a_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("convergence.toml");
    cfg.repetitions = Some(2000);
    let report = run_experiment(&cfg, dir.path(), false).unwrap();
    let w2 = column(&fs::read_to_string(dir.path().join("convergence.csv")).unwrap(), "w2");
    assert_eq!(w2.len(), 26);
    assert!((w2[0] - 2.0).abs() < 1e-12, "W2(delta_0, N(0, I_4)) = 2, got {}", w2[0]);
    assert!(report.metric("w2_decay_slope").unwrap() < 0.0);
    assert!(*w2.last().unwrap() < 0.2);
}

#[test]
fn rwm_sample_reports_acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let text = "experiment = \"sample\"\nrepetitions = 4\n[potential]\nkind = \"spherical_quadratic\"\ndim = 3\n\
                [sampler]\nsampler = \"rwm\"\neta = 0.5\nk = 500\nseed = 1\n";
    let report = run_experiment(&parse_config(text).unwrap(), dir.path(), false).unwrap();
    let rate = report.metric("acceptance_rate").unwrap();
    assert!(rate > 0.3 && rate < 1.0, "{rate}");
}
