use std::fmt;

use stoploss::Error;

/// Failure of a subcommand, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: a validation check failed. The report is still written.
    Validation(String),
    /// Exit 2.
    Config(String),
    /// Exit 3.
    Numeric(String),
    /// Exit 4.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric { .. }
            | Error::PrecisionLoss { .. }
            | Error::DegenerateConditioning(_)
            | Error::Truncation { .. }
            | Error::Payoff { .. }
            | Error::ContractViolation(_) => CliError::Numeric(e.to_string()),
            Error::Parameter(_)
            | Error::Grid(_)
            | Error::Domain(_)
            | Error::Argument(_)
            | Error::Collision(_)
            | Error::Input(_)
            | Error::Model(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
