use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate location: points {first} and {second} coincide")]
    DuplicateLocation { first: usize, second: usize },

    #[error("matrix not factorizable under the sparsity pattern: pivot {pivot:e} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("zero diagonal entry at row {row}")]
    ZeroDiagonal { row: usize },

    #[error("{algorithm} failed at t = {t}: {source}")]
    AtTime {
        algorithm: &'static str,
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },

    #[error("parse error{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse { line: Option<usize>, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_time(self, algorithm: &'static str, t: usize) -> Error {
        Error::AtTime {
            algorithm,
            t,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical algorithms (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::ZeroDiagonal { .. } | Error::AtTime { .. }
        )
    }
}
