//! Experiment harness for the MedBlockTree simulator.
//!
//! An [`ExperimentSpec`] names a dimension and its sweep; [`run_experiment`]
//! runs every point on an isolated simulator in parallel and returns one
//! [`SummaryRow`] per run, the baseline included.

mod experiment;
mod micro;
mod report;

use thiserror::Error;

use medblocktree::netsim::SimError;
use medblocktree::store::StoreError;
use medblocktree::tree::TreeError;

pub use experiment::{
    file_stem, run_experiment, run_sweep, Dimension, ExperimentReport, ExperimentSpec, RunResult,
    SweepPoint,
};
pub use micro::{
    bench_micro, Clock, MicroReport, MicroRow, MICRO_HEADER, MICRO_VERSION_LINE, MIN_ITERATIONS,
};
pub use report::{
    chi_square_test, fairness_csv, summary_csv, FairnessRow, SummaryRow, FAIRNESS_HEADER,
    FAIRNESS_VERSION_LINE, SUMMARY_HEADER, SUMMARY_VERSION_LINE,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{label}: {source}")]
    Run { label: String, source: SimError },
    #[error("{label}: {reason}")]
    Invariant { label: String, reason: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
