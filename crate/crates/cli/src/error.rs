use std::io;
use std::path::Path;

use hazard_ctmc_core::Error as CoreError;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

/// Core errors carry 0-based item indices; users see items 1-based.
impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::ItemOutOfRange { item, n } => {
                CliError::Data(format!("item {} out of range for {n} items", item + 1))
            }
            CoreError::ItemInSet { item } => CliError::Data(format!("item {} is already in the set", item + 1)),
            CoreError::DuplicateItem { item } => CliError::Data(format!("item {} appears twice", item + 1)),
            CoreError::NonFinite { row, col } => CliError::Data(format!(
                "parameter matrix entry ({}, {}) is not finite",
                row + 1,
                col + 1
            )),
            CoreError::NonFiniteGradient { sample, epoch, row, col, .. } => CliError::Numerical(format!(
                "non-finite gradient entry ({}, {}) at sample {} in epoch {epoch}",
                row + 1,
                col + 1,
                sample + 1
            )),
            CoreError::InvalidArgument(_) | CoreError::EnumerationTooLarge { .. } => CliError::Usage(err.to_string()),
            CoreError::Numerical(_) => CliError::Numerical(err.to_string()),
            _ => CliError::Data(err.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
