use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Parameter(String),

    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("jump time {0} collides with an existing jump")]
    Collision(f64),

    #[error("payoff returned {value} at {at}; payoffs must be finite and nonnegative")]
    Payoff { at: f64, value: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("recursion horizon exhausted with cumulative mass {achieved}, target {target}")]
    Truncation { achieved: f64, target: f64 },

    #[error("model not supported here: {0}")]
    Model(String),

    #[error("non-finite integrand at t = {t} on path {path}: {detail}")]
    Numeric { t: f64, path: usize, detail: String },

    #[error("oscillatory integral lost all significant digits (value {value:e}, error bound {error:e})")]
    PrecisionLoss { value: f64, error: f64 },

    #[error("conditioning event has zero probability: {0}")]
    DegenerateConditioning(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}
