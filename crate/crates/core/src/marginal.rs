//! Positive marginal laws for the claim marks.

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaLaw};

use crate::error::{ensure_positive, Result};
use crate::rng::RandomStream;

/// A positive one-dimensional law.
///
/// Pareto is parameterised by (scale, shape) with density
/// `shape * scale^shape / z^(shape + 1)` on `z >= scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalSpec {
    Constant { value: f64 },
    Exponential { rate: f64 },
    Pareto { scale: f64, shape: f64 },
    Weibull { shape: f64, scale: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl MarginalSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarginalSpec::Constant { value } => ensure_positive("constant value", value),
            MarginalSpec::Exponential { rate } => ensure_positive("exponential rate", rate),
            MarginalSpec::Pareto { scale, shape } => {
                ensure_positive("pareto scale", scale)?;
                ensure_positive("pareto shape", shape)
            }
            MarginalSpec::Weibull { shape, scale } => {
                ensure_positive("weibull shape", shape)?;
                ensure_positive("weibull scale", scale)
            }
            MarginalSpec::Gamma { shape, rate } => {
                ensure_positive("gamma shape", shape)?;
                ensure_positive("gamma rate", rate)
            }
        }
    }

    /// Distribution function `P[X <= x]`.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            MarginalSpec::Constant { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            MarginalSpec::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            MarginalSpec::Pareto { scale, shape } => {
                if x < scale {
                    0.0
                } else {
                    1.0 - (scale / x).powf(shape)
                }
            }
            MarginalSpec::Weibull { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(shape)).exp_m1()
                }
            }
            MarginalSpec::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    statrs::function::gamma::gamma_lr(shape, rate * x)
                }
            }
        }
    }

    /// Inverse distribution function for `p` in `[0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            MarginalSpec::Constant { value } => value,
            MarginalSpec::Exponential { rate } => -(-p).ln_1p() / rate,
            MarginalSpec::Pareto { scale, shape } => scale * (1.0 - p).powf(-1.0 / shape),
            MarginalSpec::Weibull { shape, scale } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
            MarginalSpec::Gamma { shape, rate } => {
                // Parameters were validated on construction of the owning spec.
                GammaLaw::new(shape, rate).map(|g| g.inverse_cdf(p)).unwrap_or(f64::NAN)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MarginalSpec::Constant { value } => value,
            MarginalSpec::Exponential { rate } => 1.0 / rate,
            MarginalSpec::Pareto { scale, shape } => {
                if shape > 1.0 {
                    shape * scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            MarginalSpec::Weibull { shape, scale } => scale * statrs::function::gamma::gamma(1.0 + 1.0 / shape),
            MarginalSpec::Gamma { shape, rate } => shape / rate,
        }
    }

    /// True when the law has no atoms.
    pub fn is_continuous(&self) -> bool {
        !matches!(self, MarginalSpec::Constant { .. })
    }
}

/// One draw from `spec`.
///
/// Closed-form laws use inversion of a single uniform; Gamma uses the
/// Marsaglia–Tsang squeeze method.
pub fn sample_marginal(spec: &MarginalSpec, stream: &mut RandomStream) -> Result<f64> {
    spec.validate()?;
    Ok(draw(spec, stream))
}

/// Draw without re-validating; callers validate once up front.
pub(crate) fn draw(spec: &MarginalSpec, stream: &mut RandomStream) -> f64 {
    match *spec {
        MarginalSpec::Constant { value } => value,
        MarginalSpec::Gamma { shape, rate } => rand_distr::Gamma::new(shape, 1.0 / rate)
            .map(|g| g.sample(stream))
            .unwrap_or(f64::NAN),
        _ => spec.quantile(stream.uniform()),
    }
}
