use std::path::Path;
use std::process::{Command, Output};

use otfpf::cli::output::{read_moments_csv, write_moments_csv};
use otfpf::experiments::{run_variance_study, ExperimentConfig};

fn otfpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otfpf")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL_STUDY: &str = r#"
kind = ["monte_carlo", "ot_fpf"]
particles = 20
replications = 8
t_max = 0.1
dt = 0.01

[model]
a = [[0.0]]
c = [[0.0]]
"#;

fn manifest_without_clock(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let clock = value.as_object_mut().unwrap().remove("wall_clock_seconds");
    assert!(clock.is_some_and(|c| c.as_f64().unwrap() >= 0.0));
    value
}

#[test]
fn simulate_twice_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = otfpf(&["simulate", "--seed", "7", "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["trajectory.csv", "kalman.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let manifest = manifest_without_clock(&a);
    assert_eq!(manifest, manifest_without_clock(&b));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
}

#[test]
fn seed_changes_stochastic_output() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    otfpf(&["simulate", "--seed", "1", "--out", a.to_str().unwrap()]);
    otfpf(&["simulate", "--seed", "2", "--out", b.to_str().unwrap()]);
    assert_ne!(std::fs::read(a.join("trajectory.csv")).unwrap(), std::fs::read(b.join("trajectory.csv")).unwrap());
}

#[test]
fn variance_study_is_reproducible_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_STUDY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = otfpf(&["variance-study", "--config", &config, "--seed", "3", "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(a.join("moments.csv")).unwrap(), std::fs::read(b.join("moments.csv")).unwrap());
    assert_eq!(manifest_without_clock(&a), manifest_without_clock(&b));

    let mut cfg = otfpf::cli::parse_config(Path::new(&config)).unwrap();
    cfg.seed = 3;
    let report = run_variance_study(&cfg).unwrap();
    assert_eq!(read_moments_csv(&a.join("moments.csv")).unwrap(), report.rows());
}

#[test]
fn moments_round_trip_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::brownian_study();
    cfg.n_particles = 7;
    cfg.replications = 5;
    cfg.t_max = 0.05;
    cfg.dt = 0.01;
    let report = run_variance_study(&cfg).unwrap();
    let path = tmp.path().join("moments.csv");
    write_moments_csv(&path, &report).unwrap();
    let back = read_moments_csv(&path).unwrap();
    assert_eq!(back.len(), report.rows().len());
    for (x, y) in back.iter().zip(report.rows()) {
        assert_eq!(x.time.to_bits(), y.time.to_bits());
        assert_eq!(x.replication_mean.to_bits(), y.replication_mean.to_bits());
        assert_eq!(x.simulation_variance.to_bits(), y.simulation_variance.to_bits());
        assert_eq!(x.analytic_reference.map(f64::to_bits), y.analytic_reference.map(f64::to_bits));
    }
}

#[test]
fn zero_horizon_gives_one_time_point() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "kind = \"ot_fpf\"\nparticles = 4\nreplications = 3\nt_max = 0.0\n[model]\na = [[0.0]]\nc = [[0.0]]\n",
    );
    let out_dir = tmp.path().join("out");
    let out = otfpf(&["variance-study", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_moments_csv(&out_dir.join("moments.csv")).unwrap();
    assert!(rows.iter().all(|r| r.time == 0.0));
    assert_eq!(rows.len(), 2);
}

#[test]
fn particles_flag_adds_particle_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL_STUDY);
    let out_dir = tmp.path().join("out");
    let out = otfpf(&["variance-study", "--config", &config, "--particles", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(out_dir.join("particles.csv")).unwrap();
    // header, then 11 times x 2 kinds x 20 particles x 1 component
    assert_eq!(text.lines().count(), 1 + 11 * 2 * 20);
}

#[test]
fn compare_attaches_kalman_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "kind = [\"fpf\", \"ot_fpf\"]\nparticles = 50\nreplications = 2\nt_max = 0.1\ndt = 0.01\n\
         [model]\na = [[0.0, 1.0], [-1.0, -0.5]]\nc = [[1.0, 0.0]]\n",
    );
    let out_dir = tmp.path().join("out");
    let out = otfpf(&["compare", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let kalman = std::fs::read_to_string(out_dir.join("kalman.csv")).unwrap();
    assert_eq!(kalman.lines().count(), 1 + 11 * 5);
    let rows = read_moments_csv(&out_dir.join("moments.csv")).unwrap();
    assert!(rows.iter().all(|r| r.analytic_reference.is_none()));
}

#[test]
fn check_passes_on_default_model() {
    let tmp = tempfile::tempdir().unwrap();
    let out = otfpf(&["check", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 19);
    assert!(!stdout.contains("FAIL"));
    assert!(tmp.path().join("check.csv").exists());
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn single_particle_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &SMALL_STUDY.replace("particles = 20", "particles = 1"));
    let out = otfpf(&["variance-study", "--config", &config, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("particles"));
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{SMALL_STUDY}\nbogus = 1\n"));
    let out = otfpf(&["simulate", "--config", &config, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_is_an_io_error() {
    let out = otfpf(&["simulate", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.toml"));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = otfpf(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_succeeds() {
    let out = otfpf(&["--help"]);
    assert!(out.status.success());
    for cmd in ["simulate", "variance-study", "compare", "check"] {
        assert!(String::from_utf8_lossy(&out.stdout).contains(cmd));
    }
}
