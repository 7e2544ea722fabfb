use ktrace_core::dataset::DatasetError;
use ktrace_core::error::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Empty(String),
    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),
    #[error("malformed plot input: {0}")]
    Plot(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn dataset_code(e: &DatasetError) -> u8 {
    match e {
        DatasetError::EmptyFile | DatasetError::EmptyAfterFilter => 3,
        _ => 2,
    }
}

impl CliError {
    /// 2 unreadable or invalid input, 3 empty corpus, 4 non-finite loss,
    /// 5 unknown student, 6 oracle mismatch, 7 malformed plot input.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Csv(_) => 2,
            CliError::Empty(_) => 3,
            CliError::OracleMismatch(_) => 6,
            CliError::Plot(_) => 7,
            CliError::Dataset(e) => dataset_code(e),
            CliError::Model(e) => match e {
                ModelError::NonFiniteLoss { .. } => 4,
                ModelError::UnknownStudent(_) => 5,
                ModelError::EmptyInput => 3,
                ModelError::Dataset(d) => dataset_code(d),
                ModelError::Io(_)
                | ModelError::Csv(_)
                | ModelError::CorruptFile(_)
                | ModelError::VersionMismatch { .. }
                | ModelError::TooLargeToEnumerate { .. }
                | ModelError::ShapeMismatch(_)
                | ModelError::IndexOutOfRange { .. } => 2,
                _ => 1,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
