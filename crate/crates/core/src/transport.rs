//! Optimal transport between Gaussians and the time-stepping transport construction.
//!
//! For `X ~ N(x̂, Σ_X)` and `Y ~ N(ŷ, Σ_Y)` the quadratic-cost optimal map is
//! affine, `T(x) = ŷ + F(x − x̂)` with
//!
//! ```text
//! F = Σ_Y^{1/2} (Σ_Y^{1/2} Σ_X Σ_Y^{1/2})^{-1/2} Σ_Y^{1/2}
//! ```
//!
//! the unique symmetric positive definite solution of `F Σ_X F = Σ_Y`.
//! Composing these maps between successive Kalman-Bucy posteriors moves a
//! particle ensemble through the filtering distributions; as `dt → 0` the
//! per-step map approaches `I + G dt` with `G` the symmetric Lyapunov
//! solution used by [`crate::ensembles::ot_fpf_step`].

use nalgebra::{DMatrix, DVector};

use crate::ensembles::Ensemble;
use crate::error::{Error, Result};
use crate::matrixeq::{solve_lyapunov, spd_inv_sqrt, spd_sqrt, symmetrize, SpdMatrix};
use crate::models::{run_kalman_bucy, GaussianBelief, LinearGaussianModel, ObservationPath};

/// `T(x) = offset + linear · (x − anchor)`
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    anchor: DVector<f64>,
    offset: DVector<f64>,
    linear: DMatrix<f64>,
}

impl AffineMap {
    pub fn new(anchor: DVector<f64>, offset: DVector<f64>, linear: DMatrix<f64>) -> Result<Self> {
        let d = anchor.len();
        if offset.len() != d || linear.nrows() != d || linear.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "affine map shapes disagree: anchor {d}, offset {}, linear {}x{}",
                offset.len(),
                linear.nrows(),
                linear.ncols()
            )));
        }
        Ok(Self {
            anchor,
            offset,
            linear,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            anchor: DVector::zeros(d),
            offset: DVector::zeros(d),
            linear: DMatrix::identity(d, d),
        }
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.linear * (x - &self.anchor)
    }

    /// Applies the map to every particle.
    pub fn apply_ensemble(&self, ens: &Ensemble) -> Result<Ensemble> {
        if ens.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "ensemble dimension {} does not match map dimension {}",
                ens.dim(),
                self.dim()
            )));
        }
        let shift = &self.offset - &self.linear * &self.anchor;
        let mut next = &self.linear * ens.particles();
        for mut col in next.column_iter_mut() {
            col += &shift;
        }
        Ensemble::from_columns(next)
    }

    /// `x ↦ other(self(x))`
    pub fn then(&self, other: &AffineMap) -> AffineMap {
        AffineMap {
            anchor: self.anchor.clone(),
            offset: &other.offset + &other.linear * (&self.offset - &other.anchor),
            linear: &other.linear * &self.linear,
        }
    }

    /// Mean and covariance of `T(X)` for `X ~ N(mean, cov)`.
    pub fn push_forward(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (self.apply(mean), &self.linear * cov * self.linear.transpose())
    }
}

/// Optimal transport map from `from` to `to`. Both covariances must be strictly PD.
pub fn gaussian_ot_map(from: &GaussianBelief, to: &GaussianBelief) -> Result<AffineMap> {
    if from.dim() != to.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            from.dim(),
            to.dim()
        )));
    }
    from.cov.require_strictly_pd()?;
    to.cov.require_strictly_pd()?;
    let linear = ot_linear_part(&from.cov, &to.cov)?;
    AffineMap::new(from.mean.clone(), to.mean.clone(), linear)
}

/// `Σ_Y^{1/2} (Σ_Y^{1/2} Σ_X Σ_Y^{1/2})^{-1/2} Σ_Y^{1/2}`
fn ot_linear_part(sigma_x: &SpdMatrix, sigma_y: &SpdMatrix) -> Result<DMatrix<f64>> {
    let root_y = spd_sqrt(sigma_y)?;
    let sandwich = SpdMatrix::new(symmetrize(&(&*root_y * &**sigma_x * &*root_y)))?;
    let inner = spd_inv_sqrt(&sandwich)?;
    Ok(symmetrize(&(&*root_y * &*inner * &*root_y)))
}

/// Expected squared displacement `E|T(X) − X|²` for `X ~ from`.
pub fn transport_cost(from: &GaussianBelief, map: &AffineMap) -> f64 {
    let d = from.dim();
    let shift = map.apply(&from.mean) - &from.mean;
    let residual = map.linear() - DMatrix::<f64>::identity(d, d);
    shift.norm_squared() + (&residual * from.cov.as_matrix() * residual.transpose()).trace()
}

/// Squared 2-Wasserstein distance
/// `|μ_a − μ_b|² + Tr(Σ_a + Σ_b − 2 (Σ_b^{1/2} Σ_a Σ_b^{1/2})^{1/2})`, clamped at 0.
pub fn wasserstein2_gaussians(a: &GaussianBelief, b: &GaussianBelief) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let root_b = spd_sqrt(&b.cov)?;
    let sandwich = SpdMatrix::new(symmetrize(&(&*root_b * &*a.cov * &*root_b)))?;
    let cross = spd_sqrt(&sandwich)?;
    let value = (&a.mean - &b.mean).norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

/// Discrete transport construction: `S_{k+1} = T_k(S_k)` with `T_k` the
/// optimal map between consecutive Kalman-Bucy beliefs.
///
/// Returns all `n + 1` ensembles. For long grids with many particles prefer
/// [`time_stepping_process_with`], which does not keep the history.
pub fn time_stepping_process(
    model: &LinearGaussianModel,
    init: &GaussianBelief,
    obs: &ObservationPath,
    particles: Ensemble,
) -> Result<Vec<Ensemble>> {
    let mut history = Vec::with_capacity(obs.n_steps() + 1);
    time_stepping_process_with(model, init, obs, particles, |_, _, ens| history.push(ens.clone()))?;
    Ok(history)
}

/// As [`time_stepping_process`], calling `observe(k, t_k, ensemble)` at every grid
/// point and returning the final ensemble.
pub fn time_stepping_process_with(
    model: &LinearGaussianModel,
    init: &GaussianBelief,
    obs: &ObservationPath,
    particles: Ensemble,
    mut observe: impl FnMut(usize, f64, &Ensemble),
) -> Result<Ensemble> {
    if particles.dim() != model.state_dim() || init.dim() != model.state_dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: model {}, belief {}, particles {}",
            model.state_dim(),
            init.dim(),
            particles.dim()
        )));
    }
    let beliefs = run_kalman_bucy(model, init, obs)?;
    let mut ens = particles;
    observe(0, 0.0, &ens);
    for (k, pair) in beliefs.windows(2).enumerate() {
        let map = gaussian_ot_map(&pair[0], &pair[1]).map_err(|e| Error::AtStep {
            step: k,
            time: obs.time(k),
            source: Box::new(e),
        })?;
        ens = map.apply_ensemble(&ens)?;
        observe(k + 1, obs.time(k + 1), &ens);
    }
    Ok(ens)
}

/// `‖F(dt) − I − G dt‖_F`, where `F(dt)` is the optimal map's linear part
/// from `Σ` to one forward-Euler Riccati step `Σ + (AΣ + ΣAᵀ + I − ΣCᵀCΣ)dt`,
/// and `G` solves `GΣ + ΣG = AΣ + ΣAᵀ + I − ΣCᵀCΣ`. Scales as `O(dt²)`.
pub fn lemma1_residual(model: &LinearGaussianModel, sigma: &SpdMatrix, dt: f64) -> Result<f64> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if sigma.dim() != model.state_dim() {
        return Err(Error::InvalidInput(format!(
            "covariance is {}x{}, model dimension is {}",
            sigma.dim(),
            sigma.dim(),
            model.state_dim()
        )));
    }
    sigma.require_strictly_pd()?;
    let rhs = model.riccati_rhs(sigma);
    let next = SpdMatrix::new(symmetrize(&(&**sigma + &rhs * dt)))?;
    next.require_strictly_pd()
        .map_err(|_| Error::NumericalInstability("Riccati step left the PD cone".into()))?;
    let f = ot_linear_part(sigma, &next)?;
    let g = solve_lyapunov(sigma, &rhs)?;
    let d = sigma.dim();
    Ok((f - DMatrix::<f64>::identity(d, d) - g * dt).norm())
}
