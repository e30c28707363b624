use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate operator: {0}")]
    DegenerateOperator(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("rank deficient: {0}")]
    Rank(String),

    #[error("no output for measurement id {0:?}")]
    Lookup(String),

    #[error("training diverged at epoch {epoch} (mse {mse:e})")]
    Divergence { epoch: usize, mse: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines and by
    /// the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::DegenerateOperator(_) => "degenerate_operator",
            Error::Parameter(_) => "parameter",
            Error::Solver { .. } => "solver",
            Error::Unsupported(_) => "unsupported",
            Error::Rank(_) => "rank",
            Error::Lookup(_) => "lookup",
            Error::Divergence { .. } => "divergence",
            Error::NonFinite(_) => "non_finite",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
