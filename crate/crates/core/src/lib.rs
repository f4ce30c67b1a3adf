//! Exact mean-field particle filters for linear-Gaussian continuous-time
//! filtering.
//!
//! The crate contrasts the stochastic feedback particle filter with its
//! deterministic optimal-transport counterpart, using the Kalman-Bucy filter
//! as the ground-truth oracle:
//!
//! * [`matrixeq`]: SPD square roots, Lyapunov and skew-symmetric matrix equations.
//! * [`models`]: the linear-Gaussian model, path simulation, Kalman-Bucy.
//! * [`transport`]: Gaussian optimal transport maps and the time-stepping construction.
//! * [`ensembles`]: Monte-Carlo, FPF and OT-FPF particle systems.
//! * [`experiments`]: replicated simulation-variance studies.
//! * [`cli`]: configuration, CSV output and the `otfpf` command line.

pub mod cli;
pub mod ensembles;
pub mod error;
pub mod experiments;
pub mod matrixeq;
pub mod models;
pub mod rng;
pub mod transport;

pub use ensembles::{Ensemble, FilterKind, MomentRecord};
pub use error::{Error, Result};
pub use matrixeq::{SkewMatrix, SpdMatrix};
pub use models::{GaussianBelief, LinearGaussianModel, ObservationPath};
pub use transport::AffineMap;
