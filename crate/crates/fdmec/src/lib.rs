//! Monte-Carlo experiment runner for the fdmec solver.
//!
//! An [`ExperimentSpec`] names a study (pairing comparison, convergence
//! traces, slot-duration sweep or edge-capacity sweep), a seed range and
//! the schemes to compare. [`run_jobs`] solves every (point, seed, scheme)
//! combination on a worker pool and [`write_outputs`] turns the records
//! into CSV tables, a schema, metadata and a gnuplot script.

pub mod experiment;
pub mod output;

use std::path::PathBuf;

use thiserror::Error;

pub use experiment::{
    emit_convergence_trace, run_jobs, summarize, ExperimentKind, ExperimentSpec, Point, RunRecord, RunResult,
    Scheme, SolveInput, SummaryRow, TraceRow,
};
pub use output::{run_experiment, write_outputs};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fdmec_core::Error),
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T> = std::result::Result<T, Error>;
