//! Incremental-session evaluation: session splits in, per-session accuracy,
//! performance drop, confusion matrices, and report files out.

mod ablate;
mod io;
mod metrics;
mod run;

pub use ablate::{ablation_csv, run_ablation, AblationAxis, AblationCell, AblationPlan};
pub use io::{write_loss_log, write_run_artifacts, RunArtifacts};
pub use metrics::{compute_pd, mean_percent, round2, ConfusionMatrix, SessionMetrics};
pub use run::{evaluate, run_incremental, RunConfig, RunOutcome};

use thiserror::Error;

use crate::datasets::DatasetError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("class label {0} is not in the classifier bank")]
    UnknownLabel(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error: {0}")]
    Io(String),
}
