use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A caller violated an operation's contract (non-scalar loss, all-masked row, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity was produced; `op` names the primitive that produced it.
    #[error("non-finite value produced by `{op}` at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at step {step} (last finite loss {last_finite_loss})")]
    Diverged { step: usize, last_finite_loss: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
