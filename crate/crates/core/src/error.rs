use thiserror::Error;

/// Errors raised by the certification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("closed loop A + BK is not Schur stable (spectral radius {radius:.6})")]
    NotSchurStable { radius: f64 },

    #[error("eigenvalue computation did not converge")]
    EigenNoConvergence,

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:e})")]
    RiccatiDiverged { iterations: usize, residual: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("scenario design failed: {0}")]
    DesignInfeasible(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("safety fault: {0}")]
    SafetyFault(String),

    #[error("recursive feasibility lost at step {step}: {dump}")]
    RecursiveFeasibilityLost { step: usize, dump: String },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// The error with stage tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
