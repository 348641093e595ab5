use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Estimator(String),
    #[error("{0}")]
    Output(String),
    /// The run finished but at least one experiment cell failed its check.
    #[error("{0}")]
    CellsFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Data(_) => 3,
            CliError::Estimator(_) => 4,
            CliError::CellsFailed(_) => 5,
        }
    }
}

impl From<rdspill::Error> for CliError {
    fn from(e: rdspill::Error) -> Self {
        let msg = e.to_string();
        if e.is_solver() {
            CliError::Solver(msg)
        } else if e.is_estimator() {
            CliError::Estimator(msg)
        } else {
            CliError::Config(msg)
        }
    }
}

impl From<rdspill::sampling::DataError> for CliError {
    fn from(e: rdspill::sampling::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}
