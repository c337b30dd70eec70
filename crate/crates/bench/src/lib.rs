//! Experiment harness: problem construction, method runs with bound
//! checks, and the similarity and scaling studies behind the `acn` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod studies;

pub use config::{BetaSource, Budget, Method, ProblemConfig, RunConfig};
pub use experiment::{run_method, run_method_on, Instance, Outcome, RunRecord, RunSpec, Summary};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] acn_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(e) if e.is_transport() => 4,
            HarnessError::Core(acn_core::Error::InvalidParameter(_) | acn_core::Error::IndivisibleShards { .. }) => 2,
            _ => 1,
        }
    }
}
