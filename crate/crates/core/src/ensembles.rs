//! Finite-N particle systems.
//!
//! Three integrators share one ensemble representation (a `d x N` matrix,
//! one column per particle):
//!
//! * [`mc_step`]: independent Brownian particles, `dSⁱ = dBⁱ`.
//! * [`fpf_step`]: the linear feedback particle filter,
//!   `dSⁱ = ASⁱdt + dB̃ⁱ + K(dZ − C(Sⁱ + Ŝ)/2 dt)`.
//! * [`ot_fpf_step`]: the optimal-transport filter,
//!   `dSⁱ = AŜdt + K(dZ − CŜdt) + G(Sⁱ − Ŝ)dt`, where `G` is the symmetric
//!   solution of `GΣ̃ + Σ̃G = AΣ̃ + Σ̃Aᵀ + I − Σ̃CᵀCΣ̃`. No noise is injected.
//!
//! All steps are explicit: the empirical mean `Ŝ`, covariance `Σ̃` (divisor
//! `N`), gain `K = Σ̃Cᵀ` and `G` are computed once from the pre-step
//! ensemble.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixeq::{solve_lyapunov, solve_skew_equation, spd_inverse, spd_sqrt, SkewMatrix, SpdMatrix};
use crate::models::{GaussianBelief, LinearGaussianModel, ObservationPath};
use crate::rng::{self, labels};

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: DMatrix<f64>,
}

impl Ensemble {
    /// Columns are particles. Requires at least two particles.
    pub fn from_columns(particles: DMatrix<f64>) -> Result<Self> {
        if particles.ncols() < 2 {
            return Err(Error::InvalidConfig(format!(
                "an ensemble needs at least 2 particles, got {}",
                particles.ncols()
            )));
        }
        if particles.nrows() == 0 {
            return Err(Error::InvalidConfig("particles must have dimension >= 1".into()));
        }
        if particles.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("particles have non-finite entries".into()));
        }
        Ok(Self { particles })
    }

    pub fn from_particles(particles: &[DVector<f64>]) -> Result<Self> {
        let d = particles.first().map_or(0, |p| p.len());
        if particles.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidInput("particles differ in dimension".into()));
        }
        Self::from_columns(DMatrix::from_fn(d, particles.len(), |i, j| particles[j][i]))
    }

    /// Scalar particles (`d = 1`).
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_columns(DMatrix::from_row_slice(1, values.len(), values))
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    pub fn len(&self) -> usize {
        self.particles.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.ncols() == 0
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn into_particles(self) -> DMatrix<f64> {
        self.particles
    }

    pub fn particle(&self, i: usize) -> DVector<f64> {
        self.particles.column(i).into_owned()
    }

    /// `(1/N) Σᵢ Sⁱ`
    pub fn empirical_mean(&self) -> DVector<f64> {
        self.particles.column_sum() / self.len() as f64
    }

    /// `(1/N) Σᵢ (Sⁱ − Ŝ)(Sⁱ − Ŝ)ᵀ`
    pub fn empirical_cov(&self) -> DMatrix<f64> {
        let centered = self.centered(&self.empirical_mean());
        let cov = &centered * centered.transpose() / self.len() as f64;
        crate::matrixeq::symmetrize(&cov)
    }

    fn centered(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let mut centered = self.particles.clone();
        for mut col in centered.column_iter_mut() {
            col -= mean;
        }
        centered
    }

    /// Mean and covariance, failing if the covariance is not strictly positive definite.
    pub fn checked_moments(&self) -> Result<(DVector<f64>, SpdMatrix)> {
        let mean = self.empirical_mean();
        let cov = SpdMatrix::new(self.empirical_cov())?;
        cov.require_strictly_pd().map_err(|e| match e {
            Error::Singular {
                min_eigenvalue,
                floor,
            } => Error::DegenerateEnsemble {
                min_eigenvalue,
                floor,
            },
            other => other,
        })?;
        Ok((mean, cov))
    }
}

/// Which particle system to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Independent Brownian particles; ignores `A`, `C` and the observations.
    MonteCarlo,
    Fpf,
    OtFpf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::MonteCarlo, FilterKind::Fpf, FilterKind::OtFpf];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::MonteCarlo => "monte_carlo",
            FilterKind::Fpf => "fpf",
            FilterKind::OtFpf => "ot_fpf",
        }
    }

    /// Whether the step consumes randomness.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, FilterKind::OtFpf)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown filter kind `{s}` (expected monte_carlo, fpf or ot_fpf)"
                ))
            })
    }
}

/// `N` i.i.d. draws from `init`, using the `ensemble-init` stream of `seed`.
pub fn init_ensemble(init: &GaussianBelief, n: usize, seed: u64) -> Result<Ensemble> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "particle count must be at least 2, got {n}"
        )));
    }
    init.cov.require_strictly_pd()?;
    let root = spd_sqrt(&init.cov)?;
    let mut rng = rng::stream(seed, labels::ENSEMBLE_INIT, 0);
    let d = init.dim();
    let mut particles = DMatrix::zeros(d, n);
    for mut col in particles.column_iter_mut() {
        col.copy_from(&crate::models::sample_gaussian(init, &root, &mut rng));
    }
    Ensemble::from_columns(particles)
}

fn check_dims(model: &LinearGaussianModel, ens: &Ensemble, dz: &DVector<f64>) -> Result<()> {
    if ens.dim() != model.state_dim() {
        return Err(Error::InvalidInput(format!(
            "ensemble dimension {} does not match model dimension {}",
            ens.dim(),
            model.state_dim()
        )));
    }
    if dz.len() != model.obs_dim() {
        return Err(Error::InvalidInput(format!(
            "observation increment has length {}, model expects {}",
            dz.len(),
            model.obs_dim()
        )));
    }
    Ok(())
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// `K = Σ̃Cᵀ`, the gain shared by both particle filters.
pub fn empirical_gain(model: &LinearGaussianModel, cov: &DMatrix<f64>) -> DMatrix<f64> {
    cov * model.c().transpose()
}

/// The symmetric drift gain `G` of the optimal-transport filter for covariance `cov`.
pub fn ot_drift_gain(model: &LinearGaussianModel, cov: &SpdMatrix) -> Result<DMatrix<f64>> {
    solve_lyapunov(cov, &model.riccati_rhs(cov))
}

/// Skew matrix `Ω` with `ΩΣ⁻¹ + Σ⁻¹Ω = Aᵀ − A + ½(ΣCᵀC − CᵀCΣ)`; it turns
/// the plain FPF gain into the symmetric drift gain, see [`exact_family_gain`].
pub fn skew_correction(model: &LinearGaussianModel, cov: &SpdMatrix) -> Result<SkewMatrix> {
    let ctc = model.c().transpose() * model.c();
    let rhs = model.a().transpose() - model.a() + (&**cov * &ctc - &ctc * &**cov) * 0.5;
    solve_skew_equation(&spd_inverse(cov)?, &rhs)
}

/// `A + ½Σ⁻¹ − ½ΣCᵀC + ΩΣ⁻¹`. For every skew `Ω` this `G` satisfies
/// `GΣ + ΣGᵀ = AΣ + ΣAᵀ + I − ΣCᵀCΣ`; `Ω = 0` is the FPF choice and
/// [`skew_correction`] gives the symmetric one.
pub fn exact_family_gain(model: &LinearGaussianModel, cov: &SpdMatrix, omega: &SkewMatrix) -> Result<DMatrix<f64>> {
    let inv = spd_inverse(cov)?;
    let ctc = model.c().transpose() * model.c();
    Ok(model.a() + &*inv * 0.5 - &**cov * ctc * 0.5 + &**omega * &*inv)
}

fn add_to_columns(m: &mut DMatrix<f64>, v: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += v;
    }
}

/// One Euler–Maruyama step of the finite-N linear FPF.
pub fn fpf_step<R: Rng + ?Sized>(
    model: &LinearGaussianModel,
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
    rng: &mut R,
) -> Result<Ensemble> {
    check_dt(dt)?;
    check_dims(model, ens, dz)?;
    let (mean, cov) = ens.checked_moments()?;
    let gain = empirical_gain(model, &cov);
    let s = ens.particles();

    // dZ − C(Sⁱ + Ŝ)/2 dt, column by column
    let mut innovation = model.c() * s * (-0.5 * dt);
    add_to_columns(&mut innovation, &(dz - model.c() * &mean * (0.5 * dt)));

    let noise = rng::standard_normal_matrix(rng, ens.dim(), ens.len());
    let next = s + model.a() * s * dt + noise * dt.sqrt() + gain * innovation;
    Ensemble::from_columns(next)
}

/// One explicit Euler step of the optimal-transport FPF. Deterministic.
pub fn ot_fpf_step(
    model: &LinearGaussianModel,
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
) -> Result<Ensemble> {
    check_dt(dt)?;
    check_dims(model, ens, dz)?;
    let (mean, cov) = ens.checked_moments()?;
    let gain = empirical_gain(model, &cov);
    let drift_gain = ot_drift_gain(model, &cov)?;

    let centered = ens.centered(&mean);
    let common = model.a() * &mean * dt + gain * (dz - model.c() * &mean * dt);
    let mut next = ens.particles() + drift_gain * centered * dt;
    add_to_columns(&mut next, &common);
    Ensemble::from_columns(next)
}

/// `Sⁱ ← Sⁱ + √dt ξⁱ`
pub fn mc_step<R: Rng + ?Sized>(ens: &Ensemble, dt: f64, rng: &mut R) -> Result<Ensemble> {
    check_dt(dt)?;
    let noise = rng::standard_normal_matrix(rng, ens.dim(), ens.len());
    Ensemble::from_columns(ens.particles() + noise * dt.sqrt())
}

/// Advances `ens` by one step of `kind`. `rng` is only drawn from by the stochastic kinds.
pub fn step<R: Rng + ?Sized>(
    kind: FilterKind,
    model: &LinearGaussianModel,
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
    rng: &mut R,
) -> Result<Ensemble> {
    match kind {
        FilterKind::MonteCarlo => mc_step(ens, dt, rng),
        FilterKind::Fpf => fpf_step(model, ens, dz, dt, rng),
        FilterKind::OtFpf => ot_fpf_step(model, ens, dz, dt),
    }
}

/// Empirical moments of an ensemble at one grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRecord {
    pub time: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MomentRecord {
    pub fn of(time: f64, ens: &Ensemble) -> Self {
        Self {
            time,
            mean: ens.empirical_mean(),
            cov: ens.empirical_cov(),
        }
    }
}

/// Draws the initial ensemble from `init` and runs `kind` over the whole grid.
///
/// The initial ensemble uses the `ensemble-init` stream of `seed`, particle
/// noise the `particle-noise` stream. Returns `n + 1` moment records.
pub fn run_filter(
    kind: FilterKind,
    model: &LinearGaussianModel,
    init: &GaussianBelief,
    obs: &ObservationPath,
    n_particles: usize,
    seed: u64,
) -> Result<Vec<MomentRecord>> {
    if init.dim() != model.state_dim() {
        return Err(Error::InvalidConfig(format!(
            "initial belief has dimension {}, model has {}",
            init.dim(),
            model.state_dim()
        )));
    }
    let ens = init_ensemble(init, n_particles, seed)?;
    run_filter_from(kind, model, ens, obs, seed, |_, _, _| {})
}

/// Runs `kind` from a given initial ensemble, calling `observe(k, t_k, ensemble)`
/// at every grid point (including `k = 0` and `k = n`).
pub fn run_filter_from(
    kind: FilterKind,
    model: &LinearGaussianModel,
    initial: Ensemble,
    obs: &ObservationPath,
    seed: u64,
    mut observe: impl FnMut(usize, f64, &Ensemble),
) -> Result<Vec<MomentRecord>> {
    let mut noise = rng::stream(seed, labels::PARTICLE_NOISE, 0);
    let mut records = Vec::with_capacity(obs.n_steps() + 1);
    let mut ens = initial;
    observe(0, 0.0, &ens);
    records.push(MomentRecord::of(0.0, &ens));
    for (k, dz) in obs.increments().iter().enumerate() {
        ens = step(kind, model, &ens, dz, obs.dt(), &mut noise).map_err(|e| Error::AtStep {
            step: k,
            time: obs.time(k),
            source: Box::new(e),
        })?;
        let t = obs.time(k + 1);
        observe(k + 1, t, &ens);
        records.push(MomentRecord::of(t, &ens));
    }
    Ok(records)
}
