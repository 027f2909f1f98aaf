//! Run configuration, read from a TOML file with dotted keys such as
//! `model.kind = "constant"` or `numerics.n_outer = 2000`.
//!
//! Only `model`, `claims.eps` and `contract.horizon` are required. Every
//! other field has the default shown on its declaration.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use stoploss::copula::{ClaimPairSpec, Dependence, MarkLink};
use stoploss::intensity::IntensityModel;
use stoploss::loss::{ClaimModel, PaymentMap, SeverityMap};
use stoploss::marginal::MarginalSpec;
use stoploss::payoff::Payoff;
use stoploss::pricing::{Contract, ContractPayoff, MuIntegration, NumericsConfig, Tranche};
use stoploss::quadrature::TimeQuadrature;
use stoploss::risk::Threshold;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub claims: ClaimsSection,
    pub contract: ContractSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub es: EsSection,
    #[serde(default)]
    pub block: BlockSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default, skip_serializing)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSection {
    Constant {
        lambda0: f64,
    },
    /// `(time, value)` knots of a piecewise-linear intensity.
    Deterministic {
        table: Vec<(f64, f64)>,
    },
    LogBrownian {
        lambda0: f64,
        beta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeverityName {
    /// `f(t, ℓ, x) = x`.
    #[default]
    Identity,
    /// `f(t, ℓ, x) = sqrt(ℓ / t) x`.
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentName {
    /// `g = f`.
    #[default]
    FromSeverity,
    /// `g(t, ℓ, x, y) = y`.
    IdentityY,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DependenceSection {
    /// ϑ = ε.
    #[default]
    Diagonal,
    Independent,
    Clayton {
        theta: f64,
    },
    /// ϑ ~ Weibull(shape, factor·ε).
    WeibullScale {
        shape: f64,
        factor: f64,
    },
    /// ϑ ~ Weibull(factor·ε, scale).
    WeibullShape {
        scale: f64,
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimsSection {
    #[serde(default)]
    pub severity: SeverityName,
    #[serde(default)]
    pub payment: PaymentName,
    pub eps: MarginalSpec,
    /// Required for `independent` and `clayton` dependence.
    #[serde(default)]
    pub theta: Option<MarginalSpec>,
    #[serde(default)]
    pub dependence: DependenceSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    /// `E[L̂ h(L)]` for the named `h`.
    #[default]
    Expectation,
    StopLoss,
    GeneralizedStopLoss,
}

/// Registry of named `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffName {
    /// `1{z ∈ [lower, upper]}`.
    Indicator,
    /// `(z - strike)⁺`.
    Call,
    /// `(strike - z)⁺`.
    Put,
    Square,
    Sqrt,
    #[default]
    One,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSection {
    pub horizon: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub payoff: PayoffKind,
    /// Used by `payoff = "expectation"`.
    #[serde(default)]
    pub h: PayoffName,
    /// K. Defaults to 0.
    #[serde(default)]
    pub lower: Option<f64>,
    /// M. Absent means no cap.
    #[serde(default)]
    pub upper: Option<f64>,
    #[serde(default)]
    pub strike: Option<f64>,
    #[serde(default)]
    pub tranche: Tranche,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureName {
    #[default]
    GaussLegendre,
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuName {
    /// `n_mu` fresh mark draws per path and node.
    #[default]
    MonteCarlo,
    /// `n_mu`-point Gauss–Laguerre rule; needs exponential ε with ϑ = ε.
    Laguerre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    pub n_outer: usize,
    pub n_inner: usize,
    pub n_mu: usize,
    pub nodes: usize,
    pub quadrature: QuadratureName,
    /// Points of the time grid for intensity paths.
    pub grid: usize,
    pub seed: u64,
    pub mu: MuName,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            n_outer: 2_000,
            n_inner: 1_000,
            n_mu: 64,
            nodes: 64,
            quadrature: QuadratureName::GaussLegendre,
            grid: 1_025,
            seed: 0,
            mu: MuName::MonteCarlo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EsMode {
    /// Exact sums; needs constant intensity, constant ε, `f = x` and `κ = 0`.
    Analytic,
    #[default]
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsSection {
    pub alpha: Option<f64>,
    pub mode: EsMode,
    pub samples: usize,
    pub threshold: Threshold,
}

impl Default for EsSection {
    fn default() -> Self {
        Self {
            alpha: None,
            mode: EsMode::MonteCarlo,
            samples: 1_000_000,
            threshold: Threshold::Strict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum BlockMode {
    /// Law of `L_T` given one sampled intensity path.
    #[default]
    Conditional,
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockSection {
    pub mode: BlockMode,
    /// Sample size; defaults to `numerics.n_inner`.
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum CheckName {
    Ipp,
    Law,
    Pricing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub checks: Vec<CheckName>,
    pub n_ipp: usize,
    pub n_law: usize,
    pub law_time: f64,
    pub n_direct: usize,
    pub lattice_step: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            checks: vec![CheckName::Ipp, CheckName::Law, CheckName::Pricing],
            n_ipp: 100_000,
            n_law: 10_000,
            law_time: 0.5,
            n_direct: 1_000_000,
            lattice_step: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub format: Format,
    pub path: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Builds every library object once so bad values fail before any work.
    fn check(&self) -> Result<(), CliError> {
        self.intensity().validate()?;
        self.claim_model()?.pair.validate()?;
        self.contract()?.validate()?;
        self.numerics()?.validate()?;
        if let Some(alpha) = self.es.alpha {
            check_alpha(alpha)?;
        }
        if self.es.samples < 2 {
            return Err(CliError::Config("es.samples must be at least 2".into()));
        }
        if self.block.samples == Some(0) {
            return Err(CliError::Config("block.samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn intensity(&self) -> IntensityModel {
        match &self.model {
            ModelSection::Constant { lambda0 } => IntensityModel::Constant { lambda0: *lambda0 },
            ModelSection::Deterministic { table } => IntensityModel::Deterministic { table: table.clone() },
            ModelSection::LogBrownian { lambda0, beta } => IntensityModel::LogBrownian {
                lambda0: *lambda0,
                beta: *beta,
            },
        }
    }

    pub fn claim_model(&self) -> Result<ClaimModel, CliError> {
        let c = &self.claims;
        let severity = match c.severity {
            SeverityName::Identity => SeverityMap::Identity,
            SeverityName::Scaled => SeverityMap::Scaled,
        };
        let payment = match c.payment {
            PaymentName::FromSeverity => PaymentMap::FromSeverity,
            PaymentName::IdentityY => PaymentMap::IdentityY,
            PaymentName::Zero => PaymentMap::Zero,
        };
        let theta = || {
            c.theta
                .ok_or_else(|| CliError::Config("missing field `claims.theta` (needed by this dependence)".into()))
        };
        let pair = match c.dependence {
            DependenceSection::Diagonal => ClaimPairSpec::diagonal(c.eps),
            DependenceSection::Independent => ClaimPairSpec::independent(c.eps, theta()?),
            DependenceSection::Clayton { theta: t } => ClaimPairSpec::clayton(c.eps, theta()?, t),
            DependenceSection::WeibullScale { shape, factor } => ClaimPairSpec {
                marginal_eps: c.eps,
                marginal_theta: c.eps,
                dependence: Dependence::ExplicitLink(MarkLink::WeibullScale { shape, factor }),
            },
            DependenceSection::WeibullShape { scale, factor } => ClaimPairSpec {
                marginal_eps: c.eps,
                marginal_theta: c.eps,
                dependence: Dependence::ExplicitLink(MarkLink::WeibullShape { scale, factor }),
            },
        };
        Ok(ClaimModel::new(severity, payment, pair))
    }

    pub fn contract(&self) -> Result<Contract, CliError> {
        let c = &self.contract;
        let lower = c.lower.unwrap_or(0.0);
        let upper = c.upper.unwrap_or(f64::INFINITY);
        let strike = || {
            c.strike
                .ok_or_else(|| CliError::Config(format!("missing field `contract.strike` (needed by h = {:?})", c.h)))
        };
        let payoff = match c.payoff {
            PayoffKind::StopLoss => ContractPayoff::StopLoss { lower, upper },
            PayoffKind::GeneralizedStopLoss => ContractPayoff::GeneralizedStopLoss { lower, upper },
            PayoffKind::Expectation => ContractPayoff::Custom(match c.h {
                PayoffName::Indicator => {
                    if lower > upper {
                        return Err(CliError::Config(format!(
                            "indicator needs lower <= upper, got [{lower}, {upper}]"
                        )));
                    }
                    Payoff::indicator(lower, upper)
                }
                PayoffName::Call => Payoff::Call { strike: strike()? },
                PayoffName::Put => Payoff::Put { strike: strike()? },
                PayoffName::Square => Payoff::Square,
                PayoffName::Sqrt => Payoff::Sqrt,
                PayoffName::One => Payoff::Constant(1.0),
                PayoffName::Zero => Payoff::Constant(0.0),
            }),
        };
        let mut contract = Contract::new(c.horizon, c.kappa, payoff);
        contract.tranche = c.tranche;
        Ok(contract)
    }

    pub fn numerics(&self) -> Result<NumericsConfig, CliError> {
        let n = &self.numerics;
        let quadrature = match n.quadrature {
            QuadratureName::GaussLegendre => TimeQuadrature::GaussLegendre { nodes: n.nodes },
            QuadratureName::Trapezoid => TimeQuadrature::Trapezoid { nodes: n.nodes },
        };
        let mu = match n.mu {
            MuName::MonteCarlo => MuIntegration::MonteCarlo,
            MuName::Laguerre => match (self.claims.eps, &self.claims.dependence) {
                (MarginalSpec::Exponential { rate }, DependenceSection::Diagonal) => {
                    MuIntegration::exponential_diagonal(rate, n.n_mu)?
                }
                _ => {
                    return Err(CliError::Config(
                        "numerics.mu = \"laguerre\" needs exponential claims.eps with diagonal dependence".into(),
                    ))
                }
            },
        };
        Ok(NumericsConfig {
            n_outer: n.n_outer,
            n_inner: n.n_inner,
            n_mu: n.n_mu,
            quadrature,
            grid_points: n.grid,
            seed: n.seed,
            mu,
        })
    }
}

pub fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("es.alpha must lie in (0, 1), got {alpha}")))
    }
}
