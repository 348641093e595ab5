use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants line up with the CLI exit codes: configuration problems,
/// solver failures, and estimator failures are kept apart so callers can
/// report them differently.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("insufficient support on the {side} side: {detail}")]
    InsufficientSupport { side: Side, detail: String },

    #[error("singular design on the {side} side (condition number {condition:.3e})")]
    Singular { side: Side, condition: f64 },

    #[error("collinear spillover regressors: 2r/h = {c:.4} must be below 2")]
    Collinear { c: f64 },

    #[error(
        "ill-posed spillover regression on the {side} side (condition number {condition:.3e}); \
         this typically means the direct effect is close to zero"
    )]
    IllPosed { side: Side, condition: f64 },

    #[error("cross-validation failed: {0}")]
    CrossValidation(String),
}

impl Error {
    /// True for errors that come from the population or lambda solvers.
    pub fn is_solver(&self) -> bool {
        matches!(self, Error::NoConvergence { .. } | Error::Numeric(_))
    }

    /// True for errors raised by the estimators.
    pub fn is_estimator(&self) -> bool {
        matches!(
            self,
            Error::InsufficientSupport { .. }
                | Error::Singular { .. }
                | Error::Collinear { .. }
                | Error::IllPosed { .. }
                | Error::CrossValidation(_)
        )
    }
}

/// Side of the cutoff. Observations with `z >= 0` belong to `Plus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn of(z: f64) -> Side {
        if z >= 0.0 {
            Side::Plus
        } else {
            Side::Minus
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Plus => f.write_str("plus"),
            Side::Minus => f.write_str("minus"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
