use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("data file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data file is empty: {0}")]
    EmptyFile(PathBuf),
    #[error("target column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("dataset needs at least one feature column besides the target")]
    NoFeatures,
    #[error("split fractions invalid: train={train}, valid={valid}")]
    InvalidFractions { train: f64, valid: f64 },
    #[error("split of {m} examples leaves the {which} portion empty")]
    EmptySplit { m: usize, which: &'static str },
    #[error("dimension mismatch: expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum LassoError {
    #[error("non-finite value in lasso input")]
    NonFinite,
    #[error("design matrix has {rows} rows but response has {len} entries")]
    ShapeMismatch { rows: usize, len: usize },
    #[error("lasso needs at least one example")]
    Empty,
    #[error("lambda must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {found} features, layer expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("layer index {k} out of range 1..={depth}")]
    LayerOutOfRange { k: usize, depth: usize },
    #[error("equation form is only defined for a single hidden layer (model has {0})")]
    NotSingleLayer(usize),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("model file schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported model format_version {found} (supported: {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bias search needs a non-zero direction")]
    ZeroDirection,
    #[error("all projections are identical; no valid split")]
    NoValidSplit,
    #[error("both sides of a split must be non-empty")]
    EmptySide,
    #[error("bias search needs at least two examples")]
    TooFewExamples,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("background set is empty")]
    EmptyBackground,
    #[error("explain set is empty")]
    EmptyExplainSet,
    #[error("{0} features exceed the exact-enumeration limit of {max}", max = crate::explain::MAX_EXACT_FEATURES)]
    TooManyFeatures(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}
