use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what} at step {step}")]
    Integration { step: usize, what: &'static str },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {0} is not an epoch of the grid")]
    OffGrid(f64),

    #[error("counts do not conform to the observation scheme: {0}")]
    Nonconforming(String),

    #[error("training diverged at update {update}: {what}")]
    Divergence { update: usize, what: String },

    #[error("solver did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize, last: Vec<f64> },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("checkpoint format version {found} is not supported (this build reads version {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
