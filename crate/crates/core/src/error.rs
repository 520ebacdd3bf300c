use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("column {column} sums to {sum}, not 1")]
    NonStochastic { column: usize, sum: f64 },

    #[error("entry ({row}, {col}) = {value} is outside [0, 1]")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("transition matrix is singular (smallest singular value {sigma_min:e})")]
    SingularNetwork { sigma_min: f64 },

    #[error("{what} is not a point of the simplex (sum {sum}, min entry {min})")]
    InvalidSimplex { what: String, sum: f64, min: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid choice model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mode density table has no entry for pair ({k}, {m})")]
    MissingPair { k: usize, m: usize },

    #[error("requested gap {requested:e} not reachable, best achievable {achieved:e}")]
    CannotReachGap { requested: f64, achieved: f64 },

    #[error("{}subproblem solver stopped after {iterations} iterations with gap {best_gap:e}",
        column.map(|c| format!("column {c}: ")).unwrap_or_default())]
    NonConvergence {
        column: Option<usize>,
        iterations: usize,
        best_gap: f64,
    },

    #[error("grid has {points} points, limit is {limit}")]
    GridTooLarge { points: u128, limit: u128 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}
