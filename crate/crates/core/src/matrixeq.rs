//! Small dense symmetric linear algebra.
//!
//! Square roots go through a symmetric eigendecomposition. The Lyapunov
//! equation `G Σ + Σ G = R` is solved by Kronecker vectorization and the
//! skew equation `Ω P + P Ω = R` on the `d(d-1)/2` skew basis; both are dense
//! direct solves, sized for the small state dimensions of filtering problems
//! (`d <= 32`).

use std::ops::Deref;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for symmetry and skew-symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues down to `-PSD_TOL * ||M||_2` are accepted as round-off.
pub const PSD_TOL: f64 = 1e-10;
/// Largest dimension accepted by the dense Kronecker solvers.
pub const MAX_DENSE_DIM: usize = 32;

/// `1e-12 * max(1, ||M||_2)`; strictly positive definite means min eigenvalue above this.
pub fn spd_floor_for_norm(spectral_norm: f64) -> f64 {
    1e-12 * spectral_norm.max(1.0)
}

/// `(M + Mᵀ) / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `max |M - Mᵀ|` divided by `max |M|` (0 for the zero matrix).
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(m - m.transpose())) / scale
}

/// `max |M + Mᵀ|` divided by `max |M|` (0 for the zero matrix).
pub fn relative_skew_defect(m: &DMatrix<f64>) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(m + m.transpose())) / scale
}

/// `||actual - expected||_F / ||expected||_F`, or the absolute norm when `expected` is zero.
pub fn relative_residual(actual: &DMatrix<f64>, expected: &DMatrix<f64>) -> f64 {
    let diff = (actual - expected).norm();
    let scale = expected.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn require_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has non-finite entries")));
    }
    Ok(m.nrows())
}

fn eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(m.clone())
}

/// Symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry and positive semidefiniteness, then stores the
    /// exactly symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        require_square(&m, "covariance")?;
        let asym = relative_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not symmetric (relative asymmetry {asym:e})"
            )));
        }
        let m = symmetrize(&m);
        let eig = eigen(&m);
        let (lo, norm) = extremes(&eig);
        if lo < -PSD_TOL * norm {
            return Err(Error::NotPsd { min_eigenvalue: lo });
        }
        Ok(SpdMatrix(m))
    }

    pub fn identity(d: usize) -> Self {
        SpdMatrix(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `(min eigenvalue, spectral norm)`
    pub fn eigen_extremes(&self) -> (f64, f64) {
        extremes(&eigen(&self.0))
    }

    pub fn spd_floor(&self) -> f64 {
        spd_floor_for_norm(self.eigen_extremes().1)
    }

    /// Fails with [`Error::Singular`] unless the minimum eigenvalue exceeds the floor.
    pub fn require_strictly_pd(&self) -> Result<()> {
        let (lo, norm) = self.eigen_extremes();
        let floor = spd_floor_for_norm(norm);
        if lo <= floor {
            return Err(Error::Singular {
                min_eigenvalue: lo,
                floor,
            });
        }
        Ok(())
    }
}

impl Deref for SpdMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn extremes(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> (f64, f64) {
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let norm = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    (lo, norm)
}

/// Skew-symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix(DMatrix<f64>);

impl SkewMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        require_square(&m, "skew matrix")?;
        let defect = relative_skew_defect(&m);
        if defect > SYMMETRY_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not skew-symmetric (relative defect {defect:e})"
            )));
        }
        Ok(SkewMatrix((&m - m.transpose()) * 0.5))
    }

    pub fn zeros(d: usize) -> Self {
        SkewMatrix(DMatrix::zeros(d, d))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for SkewMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn spectral_function(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = f(*lambda);
        scaled.column_mut(j).scale_mut(s);
    }
    symmetrize(&(scaled * v.transpose()))
}

/// Symmetric PSD square root. Eigenvalues are clamped at zero before the root.
pub fn spd_sqrt(m: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = eigen(m);
    let (lo, norm) = extremes(&eig);
    if lo < -PSD_TOL * norm {
        return Err(Error::NotPsd { min_eigenvalue: lo });
    }
    Ok(SpdMatrix(spectral_function(&eig, |l| l.max(0.0).sqrt())))
}

/// Symmetric inverse square root `M^{-1/2}`; requires strict positive definiteness.
pub fn spd_inv_sqrt(m: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = eigen(m);
    let (lo, norm) = extremes(&eig);
    let floor = spd_floor_for_norm(norm);
    if lo <= floor {
        return Err(Error::Singular {
            min_eigenvalue: lo,
            floor,
        });
    }
    Ok(SpdMatrix(spectral_function(&eig, |l| 1.0 / l.sqrt())))
}

/// Inverse of a strictly positive definite matrix, symmetrized.
pub fn spd_inverse(m: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = eigen(m);
    let (lo, norm) = extremes(&eig);
    let floor = spd_floor_for_norm(norm);
    if lo <= floor {
        return Err(Error::Singular {
            min_eigenvalue: lo,
            floor,
        });
    }
    Ok(SpdMatrix(spectral_function(&eig, |l| 1.0 / l)))
}

fn check_dense_dim(d: usize) -> Result<()> {
    if d > MAX_DENSE_DIM {
        return Err(Error::InvalidInput(format!(
            "dimension {d} exceeds the dense solver limit {MAX_DENSE_DIM}"
        )));
    }
    Ok(())
}

/// Symmetric solution `G` of `G Σ + Σ G = rhs`.
///
/// The `d² x d²` system `(I ⊗ Σ + Σ ⊗ I) vec(G) = vec(rhs)` is solved by LU.
/// For strictly positive definite `Σ` its eigenvalues are the pairwise sums
/// `λ_i + λ_j > 0`, so a singular factorization means `Σ` was not PD.
pub fn solve_lyapunov(sigma: &SpdMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = sigma.dim();
    check_dense_dim(d)?;
    if rhs.nrows() != d || rhs.ncols() != d {
        return Err(Error::InvalidInput(format!(
            "right-hand side must be {d}x{d}, got {}x{}",
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    let asym = relative_asymmetry(rhs);
    if asym > SYMMETRY_TOL {
        return Err(Error::InvalidInput(format!(
            "right-hand side is not symmetric (relative asymmetry {asym:e})"
        )));
    }
    sigma.require_strictly_pd()?;

    if d == 1 {
        return Ok(DMatrix::from_element(1, 1, rhs[(0, 0)] / (2.0 * sigma[(0, 0)])));
    }

    let eye = DMatrix::<f64>::identity(d, d);
    let system = eye.kronecker(sigma.as_matrix()) + sigma.as_matrix().kronecker(&eye);
    let b = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let (lo, norm) = sigma.eigen_extremes();
    let x = system.lu().solve(&b).ok_or(Error::Singular {
        min_eigenvalue: lo,
        floor: spd_floor_for_norm(norm),
    })?;
    Ok(symmetrize(&DMatrix::from_column_slice(d, d, x.as_slice())))
}

fn skew_basis_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
        .collect()
}

/// Skew-symmetric solution `Ω` of `Ω P + P Ω = rhs` for strictly PD `P` and skew `rhs`.
///
/// The operator maps skew matrices to skew matrices, so the system is posed
/// on the upper-triangle coordinates `ω_ij` (`i < j`) of the basis
/// `E_ij = e_i e_jᵀ - e_j e_iᵀ`.
pub fn solve_skew_equation(sigma_inv: &SpdMatrix, rhs: &DMatrix<f64>) -> Result<SkewMatrix> {
    let d = sigma_inv.dim();
    check_dense_dim(d)?;
    if rhs.nrows() != d || rhs.ncols() != d {
        return Err(Error::InvalidInput(format!(
            "right-hand side must be {d}x{d}, got {}x{}",
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    let rhs = SkewMatrix::new(rhs.clone())?;
    sigma_inv.require_strictly_pd()?;
    if d == 1 {
        return Ok(SkewMatrix::zeros(1));
    }

    let pairs = skew_basis_pairs(d);
    let p = pairs.len();
    let mut system = DMatrix::<f64>::zeros(p, p);
    let mut basis = DMatrix::<f64>::zeros(d, d);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        basis.fill(0.0);
        basis[(i, j)] = 1.0;
        basis[(j, i)] = -1.0;
        let image = &basis * sigma_inv.as_matrix() + sigma_inv.as_matrix() * &basis;
        for (row, &(a, b)) in pairs.iter().enumerate() {
            system[(row, k)] = image[(a, b)];
        }
    }
    let b = nalgebra::DVector::from_iterator(p, pairs.iter().map(|&(a, c)| rhs[(a, c)]));
    let (lo, norm) = sigma_inv.eigen_extremes();
    let omega = system.lu().solve(&b).ok_or(Error::Singular {
        min_eigenvalue: lo,
        floor: spd_floor_for_norm(norm),
    })?;

    let mut out = DMatrix::<f64>::zeros(d, d);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        out[(i, j)] = omega[k];
        out[(j, i)] = -omega[k];
    }
    Ok(SkewMatrix(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> SpdMatrix {
        let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        SpdMatrix::new(&b * b.transpose() + DMatrix::identity(d, d) * 0.1).unwrap()
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        symmetrize(&DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)))
    }

    // Eigenbasis solve: in the eigenbasis of Σ the equation decouples into
    // (λ_i + λ_j) g_ij = r_ij. Independent of the Kronecker route.
    fn lyapunov_by_eigenbasis(sigma: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(sigma.clone());
        let v = &eig.eigenvectors;
        let r = v.transpose() * rhs * v;
        let g = DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| {
            r[(i, j)] / (eig.eigenvalues[i] + eig.eigenvalues[j])
        });
        v * g * v.transpose()
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let s = spd_sqrt(&SpdMatrix::identity(3)).unwrap();
        assert!(relative_residual(&s, &DMatrix::identity(3, 3)) < 1e-14);
        let s = spd_sqrt(&SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap()).unwrap();
        assert!(relative_residual(&s, &dmatrix![2.0, 0.0; 0.0, 3.0]) < 1e-14);
    }

    #[test]
    fn sqrt_residual_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=6 {
            let m = random_spd(&mut rng, d);
            let s = spd_sqrt(&m).unwrap();
            assert!(relative_asymmetry(&s) <= SYMMETRY_TOL);
            assert!(relative_residual(&(&*s * &*s), &m) <= 1e-8);
            assert!(s.eigen_extremes().0 >= 0.0);
        }
    }

    #[test]
    fn sqrt_tolerates_semidefinite() {
        let m = SpdMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap();
        let s = spd_sqrt(&m).unwrap();
        assert!(relative_residual(&(&*s * &*s), &m) <= 1e-8);
    }

    #[test]
    fn construction_rejects_bad_matrices() {
        assert!(matches!(
            SpdMatrix::new(dmatrix![1.0, 2.0; 0.0, 1.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            SpdMatrix::new(dmatrix![1.0, 0.0; 0.0, -1.0]),
            Err(Error::NotPsd { .. })
        ));
        assert!(matches!(
            SpdMatrix::new(DMatrix::zeros(2, 3)),
            Err(Error::InvalidInput(_))
        ));
        assert!(SkewMatrix::new(dmatrix![0.0, 1.0; 1.0, 0.0]).is_err());
    }

    #[test]
    fn inv_sqrt_cases() {
        let s = spd_inv_sqrt(&SpdMatrix::identity(2)).unwrap();
        assert!(relative_residual(&s, &DMatrix::identity(2, 2)) < 1e-14);
        let s = spd_inv_sqrt(&SpdMatrix::from_diagonal(&[4.0]).unwrap()).unwrap();
        assert!((s[(0, 0)] - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for d in 1..=6 {
            let m = random_spd(&mut rng, d);
            let s = spd_inv_sqrt(&m).unwrap();
            let eye = DMatrix::identity(d, d);
            assert!((&*s * &*m * &*s - &eye).norm() <= 1e-8);
        }
    }

    #[test]
    fn inv_sqrt_rejects_singular() {
        let m = SpdMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap();
        assert!(matches!(spd_inv_sqrt(&m), Err(Error::Singular { .. })));
        let m = SpdMatrix::from_diagonal(&[1.0, 1e-14]).unwrap();
        assert!(matches!(spd_inv_sqrt(&m), Err(Error::Singular { .. })));
    }

    #[test]
    fn lyapunov_scalar_cases() {
        let one = SpdMatrix::identity(1);
        let g = solve_lyapunov(&one, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(g[(0, 0)], 0.0);
        let g = solve_lyapunov(&one, &DMatrix::from_element(1, 1, 6.0)).unwrap();
        assert!((g[(0, 0)] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_matches_eigenbasis_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in [2, 3, 4, 5] {
            let sigma = random_spd(&mut rng, d);
            let rhs = random_symmetric(&mut rng, d);
            let g = solve_lyapunov(&sigma, &rhs).unwrap();
            assert!(relative_asymmetry(&g) <= SYMMETRY_TOL);
            let residual = relative_residual(&(&g * &*sigma + &*sigma * &g), &rhs);
            assert!(residual <= 1e-8, "d={d} residual {residual:e}");
            let oracle = lyapunov_by_eigenbasis(&sigma, &rhs);
            assert!(relative_residual(&g, &oracle) <= 1e-8);
        }
    }

    #[test]
    fn lyapunov_rejects_bad_inputs() {
        let singular = SpdMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap();
        assert!(matches!(
            solve_lyapunov(&singular, &DMatrix::identity(2, 2)),
            Err(Error::Singular { .. })
        ));
        assert!(matches!(
            solve_lyapunov(&SpdMatrix::identity(2), &dmatrix![0.0, 1.0; 0.0, 0.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            solve_lyapunov(&SpdMatrix::identity(33), &DMatrix::identity(33, 33)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn skew_equation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = random_spd(&mut rng, 1);
        let omega = solve_skew_equation(&p, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(omega[(0, 0)], 0.0);

        let p = random_spd(&mut rng, 4);
        let omega = solve_skew_equation(&p, &DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(omega.norm(), 0.0);

        for d in [2, 3, 5] {
            let p = random_spd(&mut rng, d);
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let rhs = &raw - raw.transpose();
            let omega = solve_skew_equation(&p, &rhs).unwrap();
            assert!(relative_skew_defect(&omega) <= SYMMETRY_TOL);
            let residual = relative_residual(&(&*omega * &*p + &*p * &*omega), &rhs);
            assert!(residual <= 1e-8, "d={d} residual {residual:e}");
        }
    }

    #[test]
    fn skew_equation_rejects_symmetric_rhs() {
        assert!(matches!(
            solve_skew_equation(&SpdMatrix::identity(2), &DMatrix::identity(2, 2)),
            Err(Error::InvalidInput(_))
        ));
    }
}
