use std::path::PathBuf;

/// Errors raised by dataset, graph, kernel and optimizer routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset needs at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("row {row}: {msg}")]
    Csv { row: usize, msg: String },

    #[error("rows {first} and {second} are duplicate points")]
    DuplicatePoint { first: usize, second: usize },

    #[error("point {0} is the zero vector; cosine distance is undefined")]
    ZeroVector(usize),

    #[error("k = {k} out of range for n = {n} points (need 1 <= k <= n - 1)")]
    KOutOfRange { k: usize, n: usize },

    #[error("similarity weight {weight} for pair ({i}, {j}) is outside [0, 1]")]
    WeightOutOfRange { i: usize, j: usize, weight: f64 },

    #[error("size mismatch: {0}")]
    Shape(String),

    #[error("non-finite embedding coordinate at point {point} after epoch {epoch}")]
    NonFinite { point: usize, epoch: usize },

    #[error("graph has no positive weights")]
    EmptyGraph,

    #[error("points {0} and {1} coincide")]
    CoincidentPoints(usize, usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
