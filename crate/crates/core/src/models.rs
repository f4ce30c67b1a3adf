//! Linear-Gaussian signal/observation model and the Kalman-Bucy filter.
//!
//! ```text
//! dX_t = A X_t dt + dB_t        X_t ∈ R^d
//! dZ_t = C X_t dt + dW_t        Z_t ∈ R^m
//! ```
//!
//! `B` and `W` are independent standard Wiener processes (identity noise
//! covariances). Filtering results assume `(A, C)` is observable; this is not
//! checked.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrixeq::{spd_sqrt, symmetrize, SpdMatrix};
use crate::rng::{self, labels};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LinearGaussianModel {
    /// `a` is the `d x d` drift, `c` the `m x d` observation matrix.
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(Error::InvalidConfig(format!(
                "drift matrix A must be square with d >= 1, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if c.nrows() == 0 || c.ncols() != d {
            return Err(Error::InvalidConfig(format!(
                "observation matrix C must be m x {d} with m >= 1, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if a.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("A and C must have finite entries".into()));
        }
        Ok(Self { a, c })
    }

    /// `A = 0`, `C = 0`: the state is a Brownian motion and observations carry no information.
    pub fn pure_diffusion(d: usize) -> Self {
        Self {
            a: DMatrix::zeros(d, d),
            c: DMatrix::zeros(1, d),
        }
    }

    pub fn is_pure_diffusion(&self) -> bool {
        self.a.iter().chain(self.c.iter()).all(|v| *v == 0.0)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Right-hand side of the Riccati equation, `AΣ + ΣAᵀ + I − ΣCᵀCΣ`.
    pub fn riccati_rhs(&self, cov: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.state_dim();
        let a_cov = &self.a * cov;
        let c_cov = &self.c * cov;
        &a_cov + a_cov.transpose() + DMatrix::identity(d, d) - c_cov.transpose() * c_cov
    }
}

/// Gaussian `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::InvalidInput(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mean has non-finite entries".into()));
        }
        Ok(Self { mean, cov })
    }

    /// `N(0, I_d)`
    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: SpdMatrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Observation increments `dZ_k` on the uniform grid `t_k = k·dt`, `k = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    dt: f64,
    increments: Vec<DVector<f64>>,
}

impl ObservationPath {
    pub fn new(dt: f64, increments: Vec<DVector<f64>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        if let Some(first) = increments.first() {
            let m = first.len();
            if increments.iter().any(|dz| dz.len() != m) {
                return Err(Error::InvalidInput("observation increments differ in length".into()));
            }
        }
        Ok(Self { dt, increments })
    }

    /// All-zero increments; for runs where the observations are irrelevant (`C = 0`).
    pub fn silent(dt: f64, n_steps: usize, m: usize) -> Result<Self> {
        Self::new(dt, vec![DVector::zeros(m); n_steps])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[DVector<f64>] {
        &self.increments
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// `t_0 ..= t_n`
    pub fn t_grid(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| self.time(k)).collect()
    }
}

/// Number of Euler steps covering `[0, t_max]`, with `t_max / dt` rounded to the nearest integer.
pub fn step_count(t_max: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if !(t_max.is_finite() && t_max >= 0.0) {
        return Err(Error::InvalidConfig(format!("t_max must be non-negative, got {t_max}")));
    }
    Ok((t_max / dt).round() as usize)
}

/// Draws `x ~ N(belief)` as `mean + Σ^{1/2} ξ`.
pub fn sample_gaussian<R: rand::Rng + ?Sized>(
    belief: &GaussianBelief,
    root: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    &belief.mean + root * rng::standard_normal_vector(rng, belief.dim())
}

/// Euler–Maruyama simulation of the hidden state and its observations.
///
/// Returns the `n + 1` true states and the `n` increments
/// `dZ_k = C X_k dt + √dt η_k`. The state uses the `truth` stream of `seed`
/// (initial draw first), the observation noise the `observation` stream.
pub fn simulate_truth_and_observations(
    model: &LinearGaussianModel,
    init: &GaussianBelief,
    t_max: f64,
    dt: f64,
    seed: u64,
) -> Result<(Vec<DVector<f64>>, ObservationPath)> {
    if init.dim() != model.state_dim() {
        return Err(Error::InvalidConfig(format!(
            "initial belief has dimension {}, model has {}",
            init.dim(),
            model.state_dim()
        )));
    }
    let n = step_count(t_max, dt)?;
    let d = model.state_dim();
    let m = model.obs_dim();
    let sqrt_dt = dt.sqrt();
    let root = spd_sqrt(&init.cov)?;
    let mut truth_rng = rng::stream(seed, labels::TRUTH, 0);
    let mut obs_rng = rng::stream(seed, labels::OBSERVATION, 0);

    let mut states = Vec::with_capacity(n + 1);
    let mut increments = Vec::with_capacity(n);
    let mut x = sample_gaussian(init, &root, &mut truth_rng);
    for _ in 0..n {
        let noise = rng::standard_normal_vector(&mut truth_rng, d);
        let eta = rng::standard_normal_vector(&mut obs_rng, m);
        increments.push(model.c() * &x * dt + eta * sqrt_dt);
        let next = &x + model.a() * &x * dt + noise * sqrt_dt;
        states.push(std::mem::replace(&mut x, next));
    }
    states.push(x);
    Ok((states, ObservationPath::new(dt, increments)?))
}

/// One forward-Euler step of the Kalman-Bucy mean SDE and Riccati ODE.
pub fn kalman_bucy_step(
    model: &LinearGaussianModel,
    belief: &GaussianBelief,
    dz: &DVector<f64>,
    dt: f64,
) -> Result<GaussianBelief> {
    if dz.len() != model.obs_dim() {
        return Err(Error::InvalidInput(format!(
            "observation increment has length {}, model expects {}",
            dz.len(),
            model.obs_dim()
        )));
    }
    let cov = belief.cov.as_matrix();
    let gain = cov * model.c().transpose();
    let innovation = dz - model.c() * &belief.mean * dt;
    let mean = &belief.mean + model.a() * &belief.mean * dt + gain * innovation;
    let next = symmetrize(&(cov + model.riccati_rhs(cov) * dt));
    let cov = SpdMatrix::new(next).map_err(|_| {
        Error::NumericalInstability("covariance left the PSD cone after a Riccati step".into())
    })?;
    cov.require_strictly_pd().map_err(|e| {
        Error::NumericalInstability(format!("covariance lost strict positive definiteness: {e}"))
    })?;
    Ok(GaussianBelief { mean, cov })
}

/// Beliefs at `t_0 ..= t_n`; the first entry is `init`.
pub fn run_kalman_bucy(
    model: &LinearGaussianModel,
    init: &GaussianBelief,
    obs: &ObservationPath,
) -> Result<Vec<GaussianBelief>> {
    let mut beliefs = Vec::with_capacity(obs.n_steps() + 1);
    beliefs.push(init.clone());
    for (k, dz) in obs.increments().iter().enumerate() {
        let next = kalman_bucy_step(model, &beliefs[k], dz, obs.dt()).map_err(|e| Error::AtStep {
            step: k,
            time: obs.time(k),
            source: Box::new(e),
        })?;
        beliefs.push(next);
    }
    Ok(beliefs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_model(a: f64, c: f64) -> LinearGaussianModel {
        LinearGaussianModel::new(dmatrix![a], dmatrix![c]).unwrap()
    }

    fn scalar_belief(mean: f64, var: f64) -> GaussianBelief {
        GaussianBelief::new(dvector![mean], SpdMatrix::from_diagonal(&[var]).unwrap()).unwrap()
    }

    #[test]
    fn model_validation() {
        assert!(LinearGaussianModel::new(DMatrix::zeros(2, 3), DMatrix::zeros(1, 2)).is_err());
        assert!(LinearGaussianModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(1, 3)).is_err());
        assert!(LinearGaussianModel::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)).is_err());
        assert!(LinearGaussianModel::new(dmatrix![f64::NAN], dmatrix![1.0]).is_err());
    }

    #[test]
    fn simulate_rejects_bad_grid() {
        let model = scalar_model(0.0, 0.0);
        let init = scalar_belief(0.0, 1.0);
        for (t_max, dt) in [(1.0, 0.0), (1.0, -0.1), (-1.0, 0.1), (f64::NAN, 0.1)] {
            assert!(matches!(
                simulate_truth_and_observations(&model, &init, t_max, dt, 1),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn zero_horizon_has_no_steps() {
        let (truth, obs) =
            simulate_truth_and_observations(&scalar_model(0.0, 1.0), &scalar_belief(0.0, 1.0), 0.0, 1e-3, 1).unwrap();
        assert_eq!((truth.len(), obs.n_steps()), (1, 0));
    }

    #[test]
    fn simulate_is_deterministic() {
        let model = LinearGaussianModel::new(dmatrix![0.0, 1.0; -1.0, -0.5], dmatrix![1.0, 0.0]).unwrap();
        let init = GaussianBelief::standard(2);
        let a = simulate_truth_and_observations(&model, &init, 0.5, 0.01, 99).unwrap();
        let b = simulate_truth_and_observations(&model, &init, 0.5, 0.01, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 51);
        assert_eq!(a.1.n_steps(), 50);
        let c = simulate_truth_and_observations(&model, &init, 0.5, 0.01, 100).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn uninformative_increments_have_variance_dt() {
        let model = LinearGaussianModel::new(dmatrix![0.0], dmatrix![0.0; 0.0]).unwrap();
        let dt = 0.01;
        let (_, obs) = simulate_truth_and_observations(&model, &scalar_belief(0.0, 1.0), 40.0, dt, 5).unwrap();
        let n = obs.n_steps() as f64;
        for comp in 0..2 {
            let var = obs.increments().iter().map(|dz| dz[comp] * dz[comp]).sum::<f64>() / n;
            // standard error of a mean of squares of N(0, dt): dt·√(2/n)
            let se = dt * (2.0 / n).sqrt();
            assert!((var - dt).abs() <= 5.0 * se, "component {comp}: {var} vs {dt}");
        }
    }

    #[test]
    fn brownian_state_variance_grows_linearly() {
        let model = scalar_model(0.0, 1.0);
        let init = scalar_belief(0.0, 1.0);
        let reps = 10_000;
        let finals: Vec<f64> = (0..reps)
            .map(|r| simulate_truth_and_observations(&model, &init, 1.0, 0.02, r).unwrap().0.last().unwrap()[0])
            .collect();
        let mean = finals.iter().sum::<f64>() / reps as f64;
        let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        let expected = 2.0;
        let se = expected * (2.0 / (reps as f64 - 1.0)).sqrt();
        assert!((var - expected).abs() <= 3.0 * se, "{var}");
    }

    #[test]
    fn riccati_steady_state_and_pure_growth() {
        let b = kalman_bucy_step(&scalar_model(0.0, 1.0), &scalar_belief(0.3, 1.0), &dvector![0.7], 0.01).unwrap();
        assert_eq!(b.cov[(0, 0)], 1.0);

        let model = LinearGaussianModel::pure_diffusion(2);
        let b = kalman_bucy_step(&model, &GaussianBelief::standard(2), &dvector![0.4], 0.25).unwrap();
        assert_eq!(*b.cov, DMatrix::identity(2, 2) * 1.25);
        assert_eq!(b.mean, DVector::zeros(2));
    }

    #[test]
    fn zero_mean_stays_zero_without_innovation() {
        let model = LinearGaussianModel::new(dmatrix![0.0, 1.0; -1.0, -0.5], dmatrix![1.0, 0.0]).unwrap();
        let b = kalman_bucy_step(&model, &GaussianBelief::standard(2), &dvector![0.0], 0.01).unwrap();
        assert_eq!(b.mean, DVector::zeros(2));
    }

    #[test]
    fn unstable_step_is_reported() {
        // Σ = 10, c = 1, dt = 1: Σ + (1 - Σ²)dt < 0
        let err = kalman_bucy_step(&scalar_model(0.0, 1.0), &scalar_belief(0.0, 10.0), &dvector![0.0], 1.0);
        assert!(matches!(err, Err(Error::NumericalInstability(_))));
    }

    #[test]
    fn run_lengths_and_known_trajectories() {
        let model = scalar_model(0.0, 1.0);
        let init = scalar_belief(0.0, 1.0);
        let empty = ObservationPath::new(0.1, vec![]).unwrap();
        assert_eq!(run_kalman_bucy(&model, &init, &empty).unwrap(), vec![init.clone()]);

        let (_, obs) = simulate_truth_and_observations(&model, &init, 1.0, 1e-3, 3).unwrap();
        let beliefs = run_kalman_bucy(&model, &init, &obs).unwrap();
        assert_eq!(beliefs.len(), 1001);
        assert!(beliefs.iter().all(|b| b.cov[(0, 0)] == 1.0));

        let model = scalar_model(0.0, 0.0);
        let obs = ObservationPath::silent(1e-3, 1000, 1).unwrap();
        let beliefs = run_kalman_bucy(&model, &init, &obs).unwrap();
        assert!((beliefs[1000].cov[(0, 0)] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn riccati_converges_to_inverse_gain() {
        let c = 2.0;
        let model = scalar_model(0.0, c);
        let obs = ObservationPath::silent(1e-3, 5000, 1).unwrap();
        let beliefs = run_kalman_bucy(&model, &scalar_belief(0.0, 3.0), &obs).unwrap();
        let gaps: Vec<f64> = beliefs.iter().map(|b| (b.cov[(0, 0)] - 1.0 / c).abs()).collect();
        assert!(gaps[2500..].windows(2).all(|w| w[1] <= w[0]));
        assert!(gaps[5000] < 1e-6);
    }

    #[test]
    fn covariance_stays_symmetric() {
        let model = LinearGaussianModel::new(
            dmatrix![0.1, 1.0, 0.0; -1.0, -0.5, 0.3; 0.2, 0.0, -0.2],
            dmatrix![1.0, 0.0, 0.5],
        )
        .unwrap();
        let init = GaussianBelief::standard(3);
        let (_, obs) = simulate_truth_and_observations(&model, &init, 2.0, 1e-3, 4).unwrap();
        for b in run_kalman_bucy(&model, &init, &obs).unwrap() {
            assert!(crate::matrixeq::relative_asymmetry(&b.cov) <= 1e-10);
        }
    }
}
