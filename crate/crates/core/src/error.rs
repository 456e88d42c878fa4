use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants fall into two groups: input/configuration problems (bad shapes,
/// invalid parameters, unreadable files) and numerical failures (singular
/// designs, failed factorizations, non-convergence). [`Error::is_numerical`]
/// tells them apart; the CLI maps the two groups onto different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not factorable even with jitter {max_jitter:e}")]
    NotFactorable { max_jitter: f64 },

    #[error("design matrix is numerically singular (pivot ratio {pivot_ratio:e})")]
    SingularDesign { pivot_ratio: f64 },

    #[error("rotation matrix is singular")]
    SingularRotation,

    #[error("column {column} of the estimating-function matrix is identically zero")]
    DegenerateColumn { column: usize },

    #[error("{name} = {value} is out of range: {expected}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid response at row {row}: {reason}")]
    InvalidResponse { row: usize, reason: String },

    #[error("Newton iteration did not converge after {iterations} iterations (score max-abs {score_norm:e})")]
    NoConvergence { iterations: usize, score_norm: f64 },

    #[error("logistic fit diverged (|theta|_2 = {theta_norm:e}); data look separable")]
    Separation { theta_norm: f64 },

    #[error("need at least {min} observations, got {got}")]
    TooFew { min: usize, got: usize },

    #[error("probe center is not a member of the set")]
    CenterOutside,

    #[error(
        "set appears unbounded along probe direction {direction} (no exit by t_max = {t_max})"
    )]
    Unbounded { direction: usize, t_max: f64 },

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("wrong set variant: expected {expected}, got {got}")]
    WrongVariant {
        expected: &'static str,
        got: &'static str,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical pipeline, false for bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotFactorable { .. }
                | Error::SingularDesign { .. }
                | Error::SingularRotation
                | Error::DegenerateColumn { .. }
                | Error::NoConvergence { .. }
                | Error::Separation { .. }
                | Error::CenterOutside
                | Error::Unbounded { .. }
        )
    }

    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
