//! CSV and manifest writers.
//!
//! | file             | columns                                                                         |
//! |------------------|---------------------------------------------------------------------------------|
//! | `moments.csv`    | `time,filter,estimator,replication_mean,simulation_variance,analytic_reference` |
//! | `trajectory.csv` | `time,filter,estimator,value`                                                   |
//! | `kalman.csv`     | `time,estimator,value`                                                          |
//! | `particles.csv`  | `time,filter,particle,component,value`                                          |
//! | `check.csv`      | `check,value,tolerance,passed`                                                  |
//!
//! Floats use Rust's shortest round-trip formatting, so reading a file back
//! reproduces the written values bit for bit. `analytic_reference` is empty
//! where no closed form exists. Estimators are `mean[i]` and `cov[i,j]`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensembles::{FilterKind, MomentRecord};
use crate::error::{Error, Result};
use crate::experiments::{Estimator, ExperimentConfig, ExperimentReport, KindRuns, MomentsRow, SimulationResult};
use crate::models::GaussianBelief;

pub const MOMENTS_HEADER: [&str; 6] = [
    "time",
    "filter",
    "estimator",
    "replication_mean",
    "simulation_variance",
    "analytic_reference",
];

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_owned(),
            message: format!("{other:?}"),
        },
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_moments_csv(path: &Path, report: &ExperimentReport) -> Result<()> {
    write_rows(
        path,
        &MOMENTS_HEADER,
        report.rows().into_iter().map(|r| {
            [
                r.time.to_string(),
                r.filter.to_string(),
                r.estimator.to_string(),
                r.replication_mean.to_string(),
                r.simulation_variance.to_string(),
                r.analytic_reference.map_or_else(String::new, |v| v.to_string()),
            ]
        }),
    )
}

pub fn read_moments_csv(path: &Path) -> Result<Vec<MomentsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(MOMENTS_HEADER) {
        return Err(Error::Format {
            path: path.to_owned(),
            message: format!("unexpected header {header:?}"),
        });
    }
    let bad = |line: usize, what: &str| Error::Format {
        path: path.to_owned(),
        message: format!("record {line}: bad {what}"),
    };
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let float = |i: usize, what: &str| record[i].parse::<f64>().map_err(|_| bad(line, what));
        rows.push(MomentsRow {
            time: float(0, "time")?,
            filter: record[1].parse::<FilterKind>().map_err(|_| bad(line, "filter"))?,
            estimator: record[2].parse::<Estimator>().map_err(|_| bad(line, "estimator"))?,
            replication_mean: float(3, "replication_mean")?,
            simulation_variance: float(4, "simulation_variance")?,
            analytic_reference: if record[5].is_empty() {
                None
            } else {
                Some(float(5, "analytic_reference")?)
            },
        });
    }
    Ok(rows)
}

fn record_rows(kind: FilterKind, records: &[MomentRecord]) -> Vec<[String; 4]> {
    let d = records.first().map_or(0, |r| r.mean.len());
    let estimators = Estimator::all(d);
    records
        .iter()
        .flat_map(|rec| {
            estimators.iter().map(move |e| {
                [
                    rec.time.to_string(),
                    kind.to_string(),
                    e.to_string(),
                    e.evaluate(rec).to_string(),
                ]
            })
        })
        .collect()
}

/// Single-run moments, one block per filter kind.
pub fn write_trajectory_csv(path: &Path, runs: &[KindRuns]) -> Result<()> {
    write_rows(
        path,
        &["time", "filter", "estimator", "value"],
        runs.iter().flat_map(|r| record_rows(r.kind, &r.runs[0])),
    )
}

pub fn write_kalman_csv(path: &Path, times: &[f64], beliefs: &[GaussianBelief]) -> Result<()> {
    let d = beliefs.first().map_or(0, GaussianBelief::dim);
    let estimators = Estimator::all(d);
    let rows = times.iter().zip(beliefs).flat_map(|(t, b)| {
        let rec = MomentRecord {
            time: *t,
            mean: b.mean.clone(),
            cov: b.cov.as_matrix().clone(),
        };
        estimators
            .iter()
            .map(|e| [t.to_string(), e.to_string(), e.evaluate(&rec).to_string()])
            .collect::<Vec<_>>()
    });
    write_rows(path, &["time", "estimator", "value"], rows)
}

pub fn write_particles_csv(path: &Path, times: &[f64], traces: &[(FilterKind, &Vec<DMatrix<f64>>)]) -> Result<()> {
    let rows = traces.iter().flat_map(|(kind, trace)| {
        times.iter().zip(trace.iter()).flat_map(move |(t, particles)| {
            (0..particles.ncols()).flat_map(move |i| {
                (0..particles.nrows()).map(move |c| {
                    [
                        t.to_string(),
                        kind.to_string(),
                        i.to_string(),
                        c.to_string(),
                        particles[(c, i)].to_string(),
                    ]
                })
            })
        })
    });
    write_rows(path, &["time", "filter", "particle", "component", "value"], rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileChecksum {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Reproducibility metadata written next to the data files as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub files: Vec<FileChecksum>,
    pub wall_clock_seconds: f64,
}

pub fn checksum(path: &Path) -> Result<FileChecksum> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileChecksum {
        path: path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// Where and how a run was invoked.
pub struct RunContext<'a> {
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    pub out_dir: &'a Path,
    pub started: Instant,
}

impl RunContext<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(self.out_dir).map_err(|e| Error::io(self.out_dir, e))
    }

    /// Checksums `written` and writes `manifest.json`.
    pub fn finish(&self, written: &[PathBuf]) -> Result<RunManifest> {
        let files = written.iter().map(|p| checksum(p)).collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            artifact: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: self.command.to_owned(),
            seed: self.config.seed,
            config: super::config::config_echo(self.config),
            files,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.path("manifest.json");
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        file.write_all(text.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

fn traces(runs: &[KindRuns]) -> Vec<(FilterKind, &Vec<DMatrix<f64>>)> {
    runs.iter()
        .filter_map(|r| r.particle_trace.as_ref().map(|t| (r.kind, t)))
        .collect()
}

/// Writes `moments.csv`, plus `kalman.csv` when the report carries an oracle
/// and `particles.csv` when particles were captured, then the manifest.
pub fn emit_report(report: &ExperimentReport, ctx: &RunContext<'_>) -> Result<RunManifest> {
    ctx.prepare()?;
    let mut written = vec![ctx.path("moments.csv")];
    write_moments_csv(&written[0], report)?;
    if let Some(oracle) = &report.oracle {
        let path = ctx.path("kalman.csv");
        write_kalman_csv(&path, &report.times, oracle)?;
        written.push(path);
    }
    let traces = traces(&report.raw);
    if !traces.is_empty() {
        let path = ctx.path("particles.csv");
        write_particles_csv(&path, &report.times, &traces)?;
        written.push(path);
    }
    ctx.finish(&written)
}

/// Writes `trajectory.csv`, `kalman.csv`, optional `particles.csv`, and the manifest.
pub fn emit_simulation(sim: &SimulationResult, ctx: &RunContext<'_>) -> Result<RunManifest> {
    ctx.prepare()?;
    let times = sim.observations.t_grid();
    let trajectory = ctx.path("trajectory.csv");
    write_trajectory_csv(&trajectory, &sim.runs)?;
    let kalman = ctx.path("kalman.csv");
    write_kalman_csv(&kalman, &times, &sim.oracle)?;
    let mut written = vec![trajectory, kalman];
    let traces = traces(&sim.runs);
    if !traces.is_empty() {
        let path = ctx.path("particles.csv");
        write_particles_csv(&path, &times, &traces)?;
        written.push(path);
    }
    ctx.finish(&written)
}

pub fn write_check_csv(path: &Path, lines: &[super::check::CheckLine]) -> Result<()> {
    write_rows(
        path,
        &["check", "value", "tolerance", "passed"],
        lines
            .iter()
            .map(|l| [l.name.clone(), l.value.to_string(), l.tolerance.clone(), l.passed.to_string()]),
    )
}
