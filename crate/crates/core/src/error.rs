use std::path::PathBuf;

use crate::ensembles::FilterKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is singular or not strictly positive definite (min eigenvalue {min_eigenvalue:e} <= floor {floor:e})")]
    Singular { min_eigenvalue: f64, floor: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("numerical instability: {0} (try a smaller dt)")]
    NumericalInstability(String),

    #[error("degenerate ensemble: empirical covariance min eigenvalue {min_eigenvalue:e} <= floor {floor:e}")]
    DegenerateEnsemble { min_eigenvalue: f64, floor: f64 },

    #[error("step {step} (t = {time}): {source}")]
    AtStep {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("replication {replication} (seed {seed}): {source}")]
    Replication {
        replication: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("no closed-form reference for filter kind `{0}`")]
    UnsupportedReference(FilterKind),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Strips `AtStep`/`Replication` context wrappers.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::Replication { source, .. } => source.root_cause(),
            other => other,
        }
    }

    /// Process exit code: 1 config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.root_cause() {
            Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::UnsupportedReference(_) => 1,
            Error::Io { .. } | Error::Format { .. } => 3,
            _ => 2,
        }
    }
}
