//! TOML run configuration.
//!
//! ```toml
//! kind = ["monte_carlo", "ot_fpf"]   # or a single kind: kind = "ot_fpf"
//! particles = 80                      # default 80
//! replications = 500                  # default 500
//! t_max = 1.0                         # default 1.0
//! dt = 0.001                          # default 0.001
//! seed = 0                            # default 0
//!
//! [model]
//! a = [[0.0]]                         # d x d drift, row-major
//! c = [[0.0]]                         # m x d observation matrix
//!
//! [initial]                           # optional, default N(0, I)
//! mean = [0.0]
//! cov = [[1.0]]
//! ```
//!
//! Unknown keys are rejected.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::ensembles::FilterKind;
use crate::error::{Error, Result};
use crate::experiments::{self, ExperimentConfig};
use crate::matrixeq::SpdMatrix;
use crate::models::{GaussianBelief, LinearGaussianModel};

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum KindSpec {
    One(FilterKind),
    Many(Vec<FilterKind>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    a: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    mean: Option<Vec<f64>>,
    cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: KindSpec,
    particles: Option<usize>,
    replications: Option<usize>,
    t_max: Option<f64>,
    dt: Option<f64>,
    seed: Option<u64>,
    model: RawModel,
    initial: Option<RawInitial>,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::InvalidConfig(format!("{field}: matrix must be non-empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig(format!("{field}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn with_field(field: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::InvalidConfig(msg) | Error::InvalidInput(msg) => Error::InvalidConfig(format!("{field}: {msg}")),
        other => Error::InvalidConfig(format!("{field}: {other}")),
    }
}

/// Parses and validates a configuration, applying defaults.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let kinds = match raw.kind {
        KindSpec::One(k) => vec![k],
        KindSpec::Many(ks) => ks,
    };
    let model = LinearGaussianModel::new(matrix("model.a", &raw.model.a)?, matrix("model.c", &raw.model.c)?)
        .map_err(with_field("model"))?;
    let d = model.state_dim();

    let init = match raw.initial {
        None => GaussianBelief::standard(d),
        Some(initial) => {
            let mean = initial.mean.map_or_else(|| DVector::zeros(d), DVector::from_vec);
            let cov = match initial.cov {
                None => SpdMatrix::identity(d),
                Some(rows) => SpdMatrix::new(matrix("initial.cov", &rows)?).map_err(with_field("initial.cov"))?,
            };
            GaussianBelief::new(mean, cov).map_err(with_field("initial"))?
        }
    };

    let cfg = ExperimentConfig {
        kinds,
        model,
        init,
        n_particles: raw.particles.unwrap_or(experiments::DEFAULT_PARTICLES),
        replications: raw.replications.unwrap_or(experiments::DEFAULT_REPLICATIONS),
        t_max: raw.t_max.unwrap_or(experiments::DEFAULT_T_MAX),
        dt: raw.dt.unwrap_or(experiments::DEFAULT_DT),
        seed: raw.seed.unwrap_or(experiments::DEFAULT_SEED),
        capture_particles: false,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The configuration as JSON, for the run manifest.
pub fn config_echo(cfg: &ExperimentConfig) -> serde_json::Value {
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    };
    serde_json::json!({
        "kind": cfg.kinds,
        "particles": cfg.n_particles,
        "replications": cfg.replications,
        "t_max": cfg.t_max,
        "dt": cfg.dt,
        "seed": cfg.seed,
        "model": { "a": rows(cfg.model.a()), "c": rows(cfg.model.c()) },
        "initial": {
            "mean": cfg.init.mean.iter().copied().collect::<Vec<f64>>(),
            "cov": rows(&cfg.init.cov),
        },
    })
}
