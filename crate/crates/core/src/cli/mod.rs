//! The `otfpf` command line.
//!
//! ```text
//! otfpf simulate        one run of each configured filter on a simulated path
//! otfpf variance-study  replicated runs, simulation variance of Ŝ and Σ̃
//! otfpf compare         FPF vs OT-FPF on one shared observation path
//! otfpf check           residual checks of the matrix equations and transport maps
//! ```
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 numerical
//! error (or a failed check), 3 I/O error.

pub mod check;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{dmatrix, dvector};

use crate::ensembles::FilterKind;
use crate::error::{Error, Result};
use crate::experiments::{run_filtering_comparison, run_simulation, run_variance_study, ExperimentConfig};
use crate::matrixeq::SpdMatrix;
use crate::models::{GaussianBelief, LinearGaussianModel};

pub use config::{parse_config, parse_config_str};
pub use output::{emit_report, RunContext, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "otfpf", version, about = "Feedback particle filters: stochastic vs optimal transport")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run each configured filter once on a simulated observation path.
    Simulate(RunArgs),
    /// Replicated runs; simulation variance of the empirical mean and covariance.
    VarianceStudy(RunArgs),
    /// FPF against OT-FPF on one shared observation path, with the Kalman-Bucy oracle.
    Compare(RunArgs),
    /// Print matrix-equation, transport-map and step-size residuals for a model.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write particles.csv with every particle position.
    #[arg(long)]
    pub particles: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// TOML configuration file (model, initial belief, t_max, dt).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Accepted for symmetry with the other subcommands; the checks draw no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for check.csv; printed only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The observable two-dimensional model used when `compare`/`check` get no config.
pub fn default_observable_model() -> LinearGaussianModel {
    LinearGaussianModel::new(dmatrix![0.0, 1.0; -1.0, -0.5], dmatrix![1.0, 0.0]).expect("valid model")
}

fn load(path: Option<&Path>, fallback: impl FnOnce() -> ExperimentConfig) -> Result<ExperimentConfig> {
    match path {
        Some(p) => parse_config(p),
        None => Ok(fallback()),
    }
}

fn resolve(args: &RunArgs, fallback: impl FnOnce() -> ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = load(args.config.as_deref(), fallback)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.capture_particles = args.particles;
    Ok(cfg)
}

/// Starting belief for the default observable model. The identity covariance
/// is a fixed point of its Riccati equation, so this one is not.
pub fn default_observable_init() -> GaussianBelief {
    let cov = SpdMatrix::new(dmatrix![2.0, 0.5; 0.5, 1.0]).expect("positive definite");
    GaussianBelief::new(dvector![1.0, 0.0], cov).expect("matching dimensions")
}

fn comparison_default() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(vec![FilterKind::Fpf, FilterKind::OtFpf], default_observable_model());
    cfg.init = default_observable_init();
    cfg
}

fn print_manifest(manifest: &RunManifest, out: &Path) {
    for f in &manifest.files {
        println!("wrote {} ({} bytes, sha256 {})", out.join(&f.path).display(), f.bytes, f.sha256);
    }
}

/// Runs one parsed command.
pub fn execute(cli: Cli) -> Result<bool> {
    let started = Instant::now();
    match cli.command {
        Command::Simulate(args) => {
            let cfg = resolve(&args, ExperimentConfig::brownian_study)?;
            let sim = run_simulation(&cfg)?;
            let ctx = RunContext { command: "simulate", config: &cfg, out_dir: &args.out, started };
            print_manifest(&output::emit_simulation(&sim, &ctx)?, &args.out);
            Ok(true)
        }
        Command::VarianceStudy(args) => {
            let cfg = resolve(&args, ExperimentConfig::brownian_study)?;
            let report = run_variance_study(&cfg)?;
            let ctx = RunContext { command: "variance-study", config: &cfg, out_dir: &args.out, started };
            print_manifest(&emit_report(&report, &ctx)?, &args.out);
            Ok(true)
        }
        Command::Compare(args) => {
            let cfg = resolve(&args, comparison_default)?;
            let report = run_filtering_comparison(&cfg)?;
            let ctx = RunContext { command: "compare", config: &cfg, out_dir: &args.out, started };
            print_manifest(&emit_report(&report, &ctx)?, &args.out);
            Ok(true)
        }
        Command::Check(args) => {
            let cfg = load(args.config.as_deref(), comparison_default)?;
            let lines = check::run_checks(&cfg.model, &cfg.init, cfg.t_max, cfg.dt)?;
            for l in &lines {
                let verdict = if l.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {:<40} {:>12.4e}  {}", l.name, l.value, l.tolerance);
            }
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                let path = out.join("check.csv");
                output::write_check_csv(&path, &lines)?;
                let ctx = RunContext { command: "check", config: &cfg, out_dir: out, started };
                print_manifest(&ctx.finish(&[path])?, out);
            }
            Ok(lines.iter().all(|l| l.passed))
        }
    }
}

/// Parses `args` and runs the command, mapping failures to exit codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
