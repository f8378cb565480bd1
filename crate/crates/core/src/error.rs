use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("best mixed arm of agent {agent} is not unique (tie within 1e-12)")]
    NonUniqueBestArm { agent: usize },

    #[error("top-{n} set of agent {agent} is not unique (tie at the boundary)")]
    NonUniqueTopSet { agent: usize, n: usize },

    #[error("instance generation failed after {attempts} attempts (floor {floor} too high)")]
    GenerationFailed { attempts: usize, floor: f64 },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("integer allocation did not converge after {sweeps} sweeps")]
    AllocationDivergence { sweeps: usize },

    #[error("run {run} aborted: {source}")]
    RunAborted {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run did not stop within {phases} phases")]
    PhaseLimit { phases: u32 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 1,
            Error::SolverFailure(_) | Error::AllocationDivergence { .. } => 3,
            Error::RunAborted { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
