//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at row {row}, column {column}: {detail}")]
    CsvCell {
        /// 1-based data row (header excluded).
        row: usize,
        /// Column name or 1-based index.
        column: String,
        detail: String,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("target column {0:?} not found")]
    MissingTargetColumn(String),

    #[error("input dimension {0} is constant; cannot rescale to [0, 1]")]
    ConstantInputDimension(usize),

    #[error("targets are constant; cannot standardize to unit variance")]
    ConstantTargets,

    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),

    #[error("dimension {0} has fewer than 2 distinct values")]
    TooFewDistinctValues(usize),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("Cholesky factorization failed for a {size}x{size} matrix even with jitter up to {max_jitter:e}")]
    CholeskyFailure { size: usize, max_jitter: f64 },

    #[error("degenerate surrogate: {0}")]
    DegenerateSurrogate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("[stage={stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tags an error with the pipeline stage it surfaced in.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Extension for annotating results with the pipeline stage.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
