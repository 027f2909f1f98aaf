//! Joint law of the claim mark pair (ε, ϑ).

use std::fmt;
use std::sync::Arc;

use crate::error::{ensure_positive, Error, Result};
use crate::marginal::{draw, MarginalSpec};
use crate::rng::RandomStream;

/// Map from the realised ε to the law of ϑ.
#[derive(Clone)]
pub enum MarkLink {
    /// ϑ = ε.
    Identity,
    /// ϑ ~ Weibull(shape, scale = factor · ε).
    WeibullScale {
        shape: f64,
        factor: f64,
    },
    /// ϑ ~ Weibull(shape = factor · ε, scale).
    WeibullShape {
        scale: f64,
        factor: f64,
    },
    Custom(Arc<dyn Fn(f64) -> MarginalSpec + Send + Sync>),
}

impl fmt::Debug for MarkLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkLink::Identity => write!(f, "Identity"),
            MarkLink::WeibullScale { shape, factor } => f
                .debug_struct("WeibullScale")
                .field("shape", shape)
                .field("factor", factor)
                .finish(),
            MarkLink::WeibullShape { scale, factor } => f
                .debug_struct("WeibullShape")
                .field("scale", scale)
                .field("factor", factor)
                .finish(),
            MarkLink::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl MarkLink {
    pub fn theta_law(&self, eps: f64) -> MarginalSpec {
        match self {
            MarkLink::Identity => MarginalSpec::Constant { value: eps },
            MarkLink::WeibullScale { shape, factor } => MarginalSpec::Weibull {
                shape: *shape,
                scale: factor * eps,
            },
            MarkLink::WeibullShape { scale, factor } => MarginalSpec::Weibull {
                shape: factor * eps,
                scale: *scale,
            },
            MarkLink::Custom(link) => link(eps),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Dependence {
    Independent,
    Clayton {
        theta: f64,
    },
    /// ϑ drawn from a law parameterised by ε; `marginal_theta` is ignored.
    ExplicitLink(MarkLink),
}

/// Law μ of one claim mark pair.
#[derive(Debug, Clone)]
pub struct ClaimPairSpec {
    pub marginal_eps: MarginalSpec,
    pub marginal_theta: MarginalSpec,
    pub dependence: Dependence,
}

impl ClaimPairSpec {
    pub fn independent(eps: MarginalSpec, theta: MarginalSpec) -> Self {
        Self {
            marginal_eps: eps,
            marginal_theta: theta,
            dependence: Dependence::Independent,
        }
    }

    /// ϑ = ε, the case where the paid and triggering marks coincide.
    pub fn diagonal(eps: MarginalSpec) -> Self {
        Self {
            marginal_eps: eps,
            marginal_theta: eps,
            dependence: Dependence::ExplicitLink(MarkLink::Identity),
        }
    }

    pub fn clayton(eps: MarginalSpec, theta_marginal: MarginalSpec, theta: f64) -> Self {
        Self {
            marginal_eps: eps,
            marginal_theta: theta_marginal,
            dependence: Dependence::Clayton { theta },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.marginal_eps.validate()?;
        match &self.dependence {
            Dependence::Independent => self.marginal_theta.validate(),
            Dependence::Clayton { theta } => {
                ensure_positive("clayton theta", *theta)?;
                self.marginal_theta.validate()
            }
            Dependence::ExplicitLink(MarkLink::WeibullScale { shape, factor }) => {
                ensure_positive("link weibull shape", *shape)?;
                ensure_positive("link factor", *factor)
            }
            Dependence::ExplicitLink(MarkLink::WeibullShape { scale, factor }) => {
                ensure_positive("link weibull scale", *scale)?;
                ensure_positive("link factor", *factor)
            }
            Dependence::ExplicitLink(_) => Ok(()),
        }
    }

    /// Draw without validation. `validate` must have succeeded.
    pub(crate) fn draw(&self, stream: &mut RandomStream) -> (f64, f64) {
        match &self.dependence {
            Dependence::Independent => {
                let e = draw(&self.marginal_eps, stream);
                let t = draw(&self.marginal_theta, stream);
                (e, t)
            }
            Dependence::Clayton { theta } => {
                let u = stream.uniform();
                let w = stream.uniform();
                let v = clayton_conditional_inverse(u, w, *theta);
                (self.marginal_eps.quantile(u), self.marginal_theta.quantile(v))
            }
            Dependence::ExplicitLink(link) => {
                let e = draw(&self.marginal_eps, stream);
                let t = draw(&link.theta_law(e), stream);
                (e, t)
            }
        }
    }
}

/// Draw one (ε, ϑ) pair.
pub fn sample_claim_pair(spec: &ClaimPairSpec, stream: &mut RandomStream) -> Result<(f64, f64)> {
    spec.validate()?;
    Ok(spec.draw(stream))
}

/// Solves `∂C/∂u (u, v) = w` for v:
/// `v = ((w^(-θ/(1+θ)) - 1) u^(-θ) + 1)^(-1/θ)`, evaluated through
/// `exp_m1`/`ln_1p` so that θ near zero keeps its precision.
pub fn clayton_conditional_inverse(u: f64, w: f64, theta: f64) -> f64 {
    let a = (-theta / (1.0 + theta) * w.ln()).exp_m1();
    let b = (-theta * u.ln()).exp();
    (-(a * b).ln_1p() / theta).exp()
}

/// Clayton copula `C(u, v) = (u^-θ + v^-θ - 1)^(-1/θ)`.
pub fn clayton_cdf(u: f64, v: f64, theta: f64) -> f64 {
    if u <= 0.0 || v <= 0.0 {
        return 0.0;
    }
    let s = (-theta * u.ln()).exp_m1() + (-theta * v.ln()).exp_m1();
    (-(s.ln_1p()) / theta).exp()
}

/// Clayton copula density
/// `c(u, v) = (1+θ) (uv)^(-1-θ) (u^-θ + v^-θ - 1)^(-1/θ - 2)`.
pub fn clayton_density(u: f64, v: f64, theta: f64) -> Result<f64> {
    ensure_positive("clayton theta", theta)?;
    for (name, x) in [("u", u), ("v", v)] {
        if !(x > 0.0 && x <= 1.0) {
            return Err(Error::Domain(format!("{name} = {x} must lie in (0, 1]")));
        }
    }
    let (lu, lv) = (u.ln(), v.ln());
    let s = (-theta * lu).exp_m1() + (-theta * lv).exp_m1();
    let log_c = (1.0 + theta).ln() - (1.0 + theta) * (lu + lv) - (1.0 / theta + 2.0) * s.ln_1p();
    Ok(log_c.exp())
}
