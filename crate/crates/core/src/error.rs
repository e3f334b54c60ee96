use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("payload size mismatch: header expects {expected} floats, file holds {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("patch ({row}, {col}) is outside the {rows}x{cols} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("feature import: {0}")]
    FeatureImport(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("silhouette is undefined for fewer than two clusters")]
    SingleCluster,
    #[error("sampling surface is exhausted")]
    Exhausted,
    #[error("model covers {model} cells but the grid has {grid}")]
    ModelGridMismatch { model: usize, grid: usize },
    #[error("requested {requested} positives but the scene only has {available}")]
    NotEnoughPositives { requested: usize, available: usize },
    #[error("loss batch: {0}")]
    Batch(String),
    #[error("labeling budget of {budget} is used up")]
    BudgetExhausted { budget: usize },
    #[error("no patch is awaiting a label")]
    NoPendingPatch,
    #[error("pending patch is ({expected_row}, {expected_col}), got a label for ({row}, {col})")]
    PatchMismatch {
        expected_row: usize,
        expected_col: usize,
        row: usize,
        col: usize,
    },
    #[error("event log does not replay: {0}")]
    Replay(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
