use thiserror::Error;

use crate::dataset::DatasetError;
use crate::kernel::KernelError;
use crate::metrics::MetricsError;

/// Errors from the model, inference and training layers.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{what} index {index} out of range 0..{len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("exact inference limited to K <= {k_max}, got K = {k}")]
    KTooLarge { k: usize, k_max: usize },
    #[error("enumeration needs K*T <= {limit}, got {bits}")]
    TooLargeToEnumerate { bits: usize, limit: usize },
    #[error("record {step} is earlier than the previous record")]
    OutOfOrderRecord { step: usize },
    #[error("non-finite {phase} loss at iteration {iteration}")]
    NonFiniteLoss { phase: &'static str, iteration: usize },
    #[error("cannot draw negatives: every pair in the universe is positive")]
    UniverseExhausted,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("unknown student {0:?}")]
    UnknownStudent(String),
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

pub(crate) fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(ModelError::IndexOutOfRange { what, index, len })
    }
}
