//! Experiment configuration, Monte Carlo execution, metrics and CSV output.

pub mod bound;
pub mod config;
pub mod fit;
pub mod run;
pub mod trace;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph::GraphError;
use crate::objectives::ObjectiveError;
use crate::optimizer::OptimizerError;

pub use bound::{theorem1_bound_report, theorem1_rhs, BoundInputs, BoundReport};
pub use config::ExperimentConfig;
pub use fit::{fit_power_law, rate_fit, RateFit};
pub use run::{aggregate, run_experiment, Experiment, ExperimentOutput};
pub use trace::{emit_csv, parse_csv, read_csv, write_csv, Metric, RunTrace};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error("rate fit failed: {0}")]
    Fit(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 validation, 2 divergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } => 3,
            Self::Optimizer(OptimizerError::Diverged { .. }) => 2,
            _ => 1,
        }
    }
}
