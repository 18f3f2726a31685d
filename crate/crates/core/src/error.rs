use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("item count {n} is outside 1..={max}")]
    ItemCount { n: usize, max: usize },
    #[error("item index {item} out of range for {n} items")]
    ItemOutOfRange { item: usize, n: usize },
    #[error("item {item} is already in the set")]
    ItemInSet { item: usize },
    #[error("item {item} appears twice in the sequence")]
    DuplicateItem { item: usize },
    #[error("sequence is not a permutation of the {n} items")]
    NotPermutation { n: usize },
    #[error("parameter matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("enumeration too large: {size} items exceeds the cap of {cap}")]
    EnumerationTooLarge { size: usize, cap: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing observation times")]
    MissingTimes,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("non-finite gradient entry ({row}, {col}) at sample {sample} in epoch {epoch}")]
    NonFiniteGradient {
        sample: usize,
        epoch: usize,
        row: usize,
        col: usize,
        /// Parameters at the start of the failing epoch, row-major.
        theta: Vec<f64>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
