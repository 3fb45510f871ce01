use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {what}")]
    Domain { what: &'static str },

    #[error("singular coefficient factor: {what} (offending value {value})")]
    SingularFactor { what: &'static str, value: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("KKT matrix is singular: pivot {pivot:e} at elimination step {index} (threshold {threshold:e})")]
    RankDeficient {
        index: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("KKT residual {residual:e} above tolerance {tolerance:e} after refinement")]
    Convergence { residual: f64, tolerance: f64 },

    #[error("filter failure: {0}")]
    Filter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("run failed: {failed} of {total} trials failed\n{details}")]
    RunFailed {
        failed: usize,
        total: usize,
        details: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}
