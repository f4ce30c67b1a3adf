//! Replicated-run studies of simulation variance.
//!
//! A study runs `R` independent replications of a particle filter and, at
//! every grid time, reports the across-replication mean and variance
//! (divisor `R − 1`) of each component of the empirical mean `Ŝ⁽ᴺ⁾` and
//! empirical covariance `Σ̃⁽ᴺ⁾`.
//!
//! Replication `r` draws everything from the child seed
//! `rng::derive_seed(root, "replication", r)`, so results do not depend on
//! scheduling; replications run in parallel and are reduced in index order.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ensembles::{init_ensemble, run_filter_from, FilterKind, MomentRecord};
use crate::error::{Error, Result};
use crate::models::{
    run_kalman_bucy, simulate_truth_and_observations, step_count, GaussianBelief, LinearGaussianModel,
    ObservationPath,
};
use crate::rng::{self, labels};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_PARTICLES: usize = 80;
pub const DEFAULT_REPLICATIONS: usize = 500;
pub const DEFAULT_T_MAX: f64 = 1.0;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kinds: Vec<FilterKind>,
    pub model: LinearGaussianModel,
    pub init: GaussianBelief,
    pub n_particles: usize,
    pub replications: usize,
    pub t_max: f64,
    pub dt: f64,
    pub seed: u64,
    /// Keep the particle positions of replication 0 for each kind.
    pub capture_particles: bool,
}

impl ExperimentConfig {
    /// Defaults for everything except the filter kinds and the model; the
    /// initial belief is `N(0, I)`.
    pub fn new(kinds: Vec<FilterKind>, model: LinearGaussianModel) -> Self {
        let d = model.state_dim();
        Self {
            kinds,
            model,
            init: GaussianBelief::standard(d),
            n_particles: DEFAULT_PARTICLES,
            replications: DEFAULT_REPLICATIONS,
            t_max: DEFAULT_T_MAX,
            dt: DEFAULT_DT,
            seed: DEFAULT_SEED,
            capture_particles: false,
        }
    }

    /// Scalar Brownian motion from `N(0, 1)`, Monte-Carlo against optimal transport.
    pub fn brownian_study() -> Self {
        Self::new(
            vec![FilterKind::MonteCarlo, FilterKind::OtFpf],
            LinearGaussianModel::pure_diffusion(1),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::InvalidConfig("kind: at least one filter kind is required".into()));
        }
        if self.n_particles < 2 {
            return Err(Error::InvalidConfig(format!(
                "particles: must be at least 2, got {}",
                self.n_particles
            )));
        }
        if self.replications < 2 {
            return Err(Error::InvalidConfig(format!(
                "replications: must be at least 2, got {}",
                self.replications
            )));
        }
        if self.init.dim() != self.model.state_dim() {
            return Err(Error::InvalidConfig(format!(
                "initial: dimension {} does not match model dimension {}",
                self.init.dim(),
                self.model.state_dim()
            )));
        }
        self.init
            .cov
            .require_strictly_pd()
            .map_err(|e| Error::InvalidConfig(format!("initial.cov: {e}")))?;
        step_count(self.t_max, self.dt)?;
        Ok(())
    }

    pub fn replication_seed(&self, r: usize) -> u64 {
        rng::derive_seed(self.seed, labels::REPLICATION, r as u64)
    }

    /// Whether the closed-form Brownian references apply: `d = 1`, `A = 0`,
    /// `C = 0`, initial variance 1.
    pub fn is_unit_brownian(&self) -> bool {
        self.model.state_dim() == 1 && self.model.is_pure_diffusion() && self.init.cov[(0, 0)] == 1.0
    }
}

/// One scalar statistic of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    /// Component `i` of the empirical mean.
    Mean(usize),
    /// Entry `(i, j)`, `i <= j`, of the empirical covariance.
    Cov(usize, usize),
}

impl Estimator {
    /// `mean[0..d]` followed by the upper triangle of the covariance, row by row.
    pub fn all(d: usize) -> Vec<Estimator> {
        let means = (0..d).map(Estimator::Mean);
        let covs = (0..d).flat_map(move |i| (i..d).map(move |j| Estimator::Cov(i, j)));
        means.chain(covs).collect()
    }

    pub fn evaluate(self, rec: &MomentRecord) -> f64 {
        match self {
            Estimator::Mean(i) => rec.mean[i],
            Estimator::Cov(i, j) => rec.cov[(i, j)],
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Mean(i) => write!(f, "mean[{i}]"),
            Estimator::Cov(i, j) => write!(f, "cov[{i},{j}]"),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unrecognized estimator `{s}`"));
        let inner = |prefix: &str| {
            s.strip_prefix(prefix)
                .and_then(|rest| rest.strip_suffix(']'))
                .map(str::to_owned)
        };
        if let Some(idx) = inner("mean[") {
            return idx.parse().map(Estimator::Mean).map_err(|_| bad());
        }
        if let Some(pair) = inner("cov[") {
            let (i, j) = pair.split_once(',').ok_or_else(bad)?;
            return Ok(Estimator::Cov(
                i.parse().map_err(|_| bad())?,
                j.parse().map_err(|_| bad())?,
            ));
        }
        Err(bad())
    }
}

/// Cross-replication statistics of one estimator at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorPoint {
    pub replication_mean: f64,
    pub simulation_variance: f64,
    pub analytic_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSeries {
    pub kind: FilterKind,
    pub estimator: Estimator,
    /// One point per grid time.
    pub points: Vec<EstimatorPoint>,
}

/// Raw per-replication output of one filter kind.
#[derive(Debug, Clone, PartialEq)]
pub struct KindRuns {
    pub kind: FilterKind,
    pub seeds: Vec<u64>,
    /// `runs[r][k]`: moments of replication `r` at time `t_k`.
    pub runs: Vec<Vec<MomentRecord>>,
    /// Particle positions (`d x N`) of replication 0 at every time, when captured.
    pub particle_trace: Option<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub times: Vec<f64>,
    pub n_particles: usize,
    pub replications: usize,
    pub series: Vec<EstimatorSeries>,
    pub raw: Vec<KindRuns>,
    /// Kalman-Bucy beliefs on the shared observation path (comparison studies only).
    pub oracle: Option<Vec<GaussianBelief>>,
}

/// One line of the flattened report: the `moments.csv` schema.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentsRow {
    pub time: f64,
    pub filter: FilterKind,
    pub estimator: Estimator,
    pub replication_mean: f64,
    pub simulation_variance: f64,
    pub analytic_reference: Option<f64>,
}

impl ExperimentReport {
    pub fn series_for(&self, kind: FilterKind, estimator: Estimator) -> Option<&EstimatorSeries> {
        self.series
            .iter()
            .find(|s| s.kind == kind && s.estimator == estimator)
    }

    pub fn runs_for(&self, kind: FilterKind) -> Option<&KindRuns> {
        self.raw.iter().find(|r| r.kind == kind)
    }

    /// Index of the grid time closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map_or(0, |(k, _)| k)
    }

    /// Rows ordered by time, then series order.
    pub fn rows(&self) -> Vec<MomentsRow> {
        let mut rows = Vec::with_capacity(self.times.len() * self.series.len());
        for (k, &time) in self.times.iter().enumerate() {
            for s in &self.series {
                let p = s.points[k];
                rows.push(MomentsRow {
                    time,
                    filter: s.kind,
                    estimator: s.estimator,
                    replication_mean: p.replication_mean,
                    simulation_variance: p.simulation_variance,
                    analytic_reference: p.analytic_reference,
                });
            }
        }
        rows
    }
}

/// Closed-form simulation variances `(Var Ŝ⁽ᴺ⁾_t, Var Σ̃⁽ᴺ⁾_t)` for a scalar
/// Brownian motion started from `N(0, 1)`:
/// Monte-Carlo `((1+t)/N, 3(1+t)²/N)`, optimal transport `(1/N, 3/N)`.
pub fn analytic_reference(kind: FilterKind, t: f64, n: usize) -> Result<(f64, f64)> {
    let n = n as f64;
    match kind {
        FilterKind::MonteCarlo => Ok(((1.0 + t) / n, 3.0 * (1.0 + t).powi(2) / n)),
        FilterKind::OtFpf => Ok((1.0 / n, 3.0 / n)),
        FilterKind::Fpf => Err(Error::UnsupportedReference(kind)),
    }
}

fn mean_and_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    let mean = sum / count as f64;
    let ss = values.map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, ss / (count as f64 - 1.0))
}

fn summarize(runs: &KindRuns, d: usize, times: &[f64], n: usize, with_reference: bool) -> Vec<EstimatorSeries> {
    Estimator::all(d)
        .into_iter()
        .map(|estimator| {
            let points = times
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let (replication_mean, simulation_variance) =
                        mean_and_variance(runs.runs.iter().map(|run| estimator.evaluate(&run[k])));
                    let analytic_reference = match (with_reference, estimator) {
                        (true, Estimator::Mean(0)) => analytic_reference(runs.kind, t, n).ok().map(|r| r.0),
                        (true, Estimator::Cov(0, 0)) => analytic_reference(runs.kind, t, n).ok().map(|r| r.1),
                        _ => None,
                    };
                    EstimatorPoint {
                        replication_mean,
                        simulation_variance,
                        analytic_reference,
                    }
                })
                .collect();
            EstimatorSeries {
                kind: runs.kind,
                estimator,
                points,
            }
        })
        .collect()
}

struct Replicate {
    records: Vec<MomentRecord>,
    trace: Option<Vec<DMatrix<f64>>>,
}

fn run_replication(
    cfg: &ExperimentConfig,
    kind: FilterKind,
    obs: &ObservationPath,
    seed: u64,
    capture: bool,
) -> Result<Replicate> {
    let ens = init_ensemble(&cfg.init, cfg.n_particles, seed)?;
    let mut trace = capture.then(Vec::new);
    let records = run_filter_from(kind, &cfg.model, ens, obs, seed, |_, _, e| {
        if let Some(t) = trace.as_mut() {
            t.push(e.particles().clone());
        }
    })?;
    Ok(Replicate { records, trace })
}

/// Runs every replication of `kind`. `shared` fixes the observation path;
/// otherwise replication `r` simulates its own path from its seed.
fn run_kind(cfg: &ExperimentConfig, kind: FilterKind, shared: Option<&ObservationPath>) -> Result<KindRuns> {
    let seeds: Vec<u64> = (0..cfg.replications).map(|r| cfg.replication_seed(r)).collect();
    let outcomes: Vec<Result<Replicate>> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            let own;
            let obs = match shared {
                Some(path) => path,
                None => {
                    own = simulate_truth_and_observations(&cfg.model, &cfg.init, cfg.t_max, cfg.dt, seed)?.1;
                    &own
                }
            };
            run_replication(cfg, kind, obs, seed, cfg.capture_particles && r == 0)
        })
        .collect();

    let mut runs = Vec::with_capacity(outcomes.len());
    let mut particle_trace = None;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let rep = outcome.map_err(|e| Error::Replication {
            replication: r,
            seed: seeds[r],
            source: Box::new(e),
        })?;
        if rep.trace.is_some() {
            particle_trace = rep.trace;
        }
        runs.push(rep.records);
    }
    Ok(KindRuns {
        kind,
        seeds,
        runs,
        particle_trace,
    })
}

fn assemble(cfg: &ExperimentConfig, raw: Vec<KindRuns>, oracle: Option<Vec<GaussianBelief>>, with_reference: bool) -> ExperimentReport {
    let n_steps = raw[0].runs[0].len();
    let times: Vec<f64> = raw[0].runs[0].iter().map(|r| r.time).collect();
    debug_assert_eq!(times.len(), n_steps);
    let d = cfg.model.state_dim();
    let series = raw
        .iter()
        .flat_map(|runs| summarize(runs, d, &times, cfg.n_particles, with_reference))
        .collect();
    ExperimentReport {
        times,
        n_particles: cfg.n_particles,
        replications: cfg.replications,
        series,
        raw,
        oracle,
    }
}

/// Unconditional simulation-variance study: every replication draws a fresh
/// initial ensemble and its own observation path. Closed-form references are
/// attached when [`ExperimentConfig::is_unit_brownian`] holds.
pub fn run_variance_study(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let raw = cfg
        .kinds
        .iter()
        .map(|&kind| run_kind(cfg, kind, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(cfg, raw, None, cfg.is_unit_brownian()))
}

/// Conditional study: one observation path (simulated from the root seed)
/// shared by every replication and kind, with the Kalman-Bucy oracle on that
/// path attached. No closed-form references.
pub fn run_filtering_comparison(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (_, obs) = simulate_truth_and_observations(&cfg.model, &cfg.init, cfg.t_max, cfg.dt, cfg.seed)?;
    let oracle = run_kalman_bucy(&cfg.model, &cfg.init, &obs)?;
    let raw = cfg
        .kinds
        .iter()
        .map(|&kind| run_kind(cfg, kind, Some(&obs)))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(cfg, raw, Some(oracle), false))
}

/// A single run of each kind on one shared path.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub truth: Vec<nalgebra::DVector<f64>>,
    pub observations: ObservationPath,
    pub oracle: Vec<GaussianBelief>,
    pub runs: Vec<KindRuns>,
}

/// Simulates one truth/observation path from the root seed and runs every
/// configured kind once on it, with the ensemble seeded by replication 0.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<SimulationResult> {
    if cfg.kinds.is_empty() {
        return Err(Error::InvalidConfig("kind: at least one filter kind is required".into()));
    }
    let (truth, observations) = simulate_truth_and_observations(&cfg.model, &cfg.init, cfg.t_max, cfg.dt, cfg.seed)?;
    let oracle = run_kalman_bucy(&cfg.model, &cfg.init, &observations)?;
    let seed = cfg.replication_seed(0);
    let runs = cfg
        .kinds
        .iter()
        .map(|&kind| {
            let rep = run_replication(cfg, kind, &observations, seed, cfg.capture_particles)?;
            Ok(KindRuns {
                kind,
                seeds: vec![seed],
                runs: vec![rep.records],
                particle_trace: rep.trace,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationResult {
        truth,
        observations,
        oracle,
        runs,
    })
}
