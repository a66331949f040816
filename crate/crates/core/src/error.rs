use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("problem size {n} exceeds dense guard {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("columns are not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),

    /// A pivot fell below the pivot tolerance during an unpivoted LU.
    /// `cluster` and `level` are filled in when raised from the factorization.
    #[error("singular pivot {pivot:.3e} at local index {index} (cluster {cluster:?}, level {level:?})")]
    SingularPivot {
        index: usize,
        pivot: f64,
        cluster: Option<usize>,
        level: Option<usize>,
    },

    #[error("block ({0}, {1}) is not admissible")]
    NotAdmissible(usize, usize),

    #[error("relative residual undefined for a zero right-hand side")]
    UndefinedMetric,

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularPivot { .. } | Error::NonFinite(_) | Error::NotOrthonormal(_)
        )
    }

    pub(crate) fn with_context(self, cluster: usize, level: usize) -> Self {
        match self {
            Error::SingularPivot { index, pivot, .. } => Error::SingularPivot {
                index,
                pivot,
                cluster: Some(cluster),
                level: Some(level),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
