use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{total} samples cannot be split evenly across {workers} workers")]
    IndivisibleShards { total: usize, workers: usize },

    #[error("{workers} workers requested for only {total} samples")]
    TooManyWorkers { total: usize, workers: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetric(f64),

    #[error("matrix dimension {dim} exceeds the limit of {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    Indefinite(f64),

    #[error("root finding did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("estimate sequence has no curvature (quadratic and cubic coefficients are zero)")]
    DegenerateEstimateSequence,

    #[error("objective is not strongly convex; refusing to solve")]
    NotStronglyConvex,

    #[error("round count {0} is odd")]
    OddRoundCount(u64),

    #[error("malformed message: {0}")]
    Malformed(String),

    #[error("worker {worker} timed out in round {round}")]
    Timeout { worker: u32, round: u64 },

    #[error("runtime is closed")]
    RuntimeClosed,

    #[error("transport failure: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures originating in the communication layer.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Error::Transport(_) | Error::Io(_) | Error::Timeout { .. } | Error::Malformed(_) | Error::RuntimeClosed
        )
    }
}
