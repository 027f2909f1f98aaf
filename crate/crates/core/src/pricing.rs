//! Prices `E[L̂_T h(L_T)]` through the building block:
//!
//! `E[L̂_T h(L_T)] = ∫_0^T e^{-κ(T-t)} E[g(t, Λ_t, x̄, ȳ) λ_t φ_λ^h(f(t, Λ_t, x̄) e^{-κ(T-t)})] dt`
//!
//! with `(x̄, ȳ) ~ μ` independent of everything else. Each outer path gets one
//! [`EmpiricalBlock`] that serves every quadrature node and mark draw, and the
//! outer paths are the only level treated as independent replicates.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{build_block, EmpiricalBlock};
use crate::error::{ensure_positive, Error, Result};
use crate::intensity::{simulate_path, IntensityModel, IntensityPath, TimeGrid};
use crate::loss::{ClaimModel, PaymentMap, SeverityMap};
use crate::marginal::MarginalSpec;
use crate::panjer::{panjer_auto, CompoundTable, Discretization, DiscretizedSeverity};
use crate::payoff::{Interval, Payoff};
use crate::quadrature::{adaptive_gk, gauss_laguerre, CompensatedSum, TimeQuadrature};
use crate::rng::RandomStream;
use crate::stats::Moments;

const TAG_PATH: u64 = 0;
const TAG_INNER: u64 = 1;
const TAG_MU: u64 = 2;

/// Endpoint convention for the tranche `[K, M]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tranche {
    /// `1{L ∈ [K, M]}` in both the expectation and probability terms.
    #[default]
    Closed,
    /// `1{L ∈ [K, M)}`; the premium then equals `E[Φ(L_T)]` even when `L_T`
    /// has an atom at `M`.
    HalfOpen,
}

#[derive(Debug, Clone)]
pub enum ContractPayoff {
    StopLoss { lower: f64, upper: f64 },
    GeneralizedStopLoss { lower: f64, upper: f64 },
    Custom(Payoff),
}

#[derive(Debug, Clone)]
pub struct Contract {
    pub horizon: f64,
    pub kappa: f64,
    pub payoff: ContractPayoff,
    pub tranche: Tranche,
}

impl Contract {
    pub fn new(horizon: f64, kappa: f64, payoff: ContractPayoff) -> Self {
        Self {
            horizon,
            kappa,
            payoff,
            tranche: Tranche::Closed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("horizon", self.horizon)?;
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::Parameter(format!(
                "kappa must be finite and >= 0, got {}",
                self.kappa
            )));
        }
        if let ContractPayoff::StopLoss { lower, upper } | ContractPayoff::GeneralizedStopLoss { lower, upper } =
            self.payoff
        {
            if lower.is_nan() || upper.is_nan() || lower > upper {
                return Err(Error::Argument(format!("tranche [{lower}, {upper}] needs K <= M")));
            }
        }
        Ok(())
    }

    fn tranche_interval(&self, lower: f64, upper: f64) -> Interval {
        match self.tranche {
            Tranche::Closed => Interval::closed(lower, upper),
            Tranche::HalfOpen => Interval::half_open(lower, upper),
        }
    }

    /// The `h` whose expectation term the pricing formula evaluates.
    pub fn h(&self) -> Payoff {
        match &self.payoff {
            ContractPayoff::StopLoss { lower, upper } => Payoff::Indicator(self.tranche_interval(*lower, *upper)),
            ContractPayoff::GeneralizedStopLoss { lower, .. } => Payoff::Indicator(Interval::above(*lower)),
            ContractPayoff::Custom(h) => h.clone(),
        }
    }

    /// Per-scenario value whose expectation is the contract price: `L̂·h(L)`
    /// for custom payoffs and the premium decomposition for stop-loss tranches.
    pub fn scenario_value(&self, loss: f64, paid: f64) -> f64 {
        match &self.payoff {
            ContractPayoff::Custom(h) => paid * h.eval(loss),
            ContractPayoff::StopLoss { lower, upper } | ContractPayoff::GeneralizedStopLoss { lower, upper } => {
                let inside = self.tranche_interval(*lower, *upper).contains(loss);
                let first = match self.payoff {
                    ContractPayoff::StopLoss { .. } => {
                        if inside {
                            loss
                        } else {
                            0.0
                        }
                    }
                    _ => {
                        if loss > *lower {
                            paid
                        } else {
                            0.0
                        }
                    }
                };
                let mut v = first - if inside { *lower } else { 0.0 };
                if upper.is_finite() && loss >= *upper {
                    v += upper - lower;
                }
                v
            }
        }
    }
}

/// The stop-loss payoff `Φ(L) = min((L - K)⁺, M - K)`.
pub fn stop_loss_payoff(loss: f64, lower: f64, upper: f64) -> f64 {
    (loss - lower).max(0.0).min(upper - lower)
}

/// One weighted atom of a quadrature rule for μ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkAtom {
    pub weight: f64,
    pub eps: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuIntegration {
    /// `n_mu` fresh draws from μ per path and node.
    #[default]
    MonteCarlo,
    /// A fixed rule shared by all paths and nodes.
    Rule { atoms: Vec<MarkAtom> },
}

impl MuIntegration {
    /// Gauss–Laguerre rule for `ε ~ Exp(rate)` with `ϑ = ε`; exact for
    /// integrands polynomial in ε up to degree `2n - 1`.
    pub fn exponential_diagonal(rate: f64, n: usize) -> Result<Self> {
        ensure_positive("rate", rate)?;
        if n == 0 {
            return Err(Error::Parameter("rule needs at least one atom".into()));
        }
        let atoms = gauss_laguerre(n)
            .into_iter()
            .map(|(x, w)| MarkAtom {
                weight: w,
                eps: x / rate,
                theta: x / rate,
            })
            .collect();
        Ok(MuIntegration::Rule { atoms })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericsConfig {
    pub n_outer: usize,
    pub n_inner: usize,
    pub n_mu: usize,
    pub quadrature: TimeQuadrature,
    /// Points of the uniform time grid intensity paths are sampled on.
    pub grid_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub mu: MuIntegration,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            n_outer: 2_000,
            n_inner: 1_000,
            n_mu: 64,
            quadrature: TimeQuadrature::default(),
            grid_points: 1_025,
            seed: 0,
            mu: MuIntegration::MonteCarlo,
        }
    }
}

impl NumericsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_outer", self.n_outer),
            ("n_inner", self.n_inner),
            ("n_mu", self.n_mu),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if self.grid_points < 2 {
            return Err(Error::Parameter("grid_points must be at least 2".into()));
        }
        if let MuIntegration::Rule { atoms } = &self.mu {
            if atoms.is_empty() {
                return Err(Error::Parameter("mark rule has no atoms".into()));
            }
        }
        Ok(())
    }

    fn mu_count(&self) -> usize {
        match &self.mu {
            MuIntegration::MonteCarlo => self.n_mu,
            MuIntegration::Rule { atoms } => atoms.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub n_outer: usize,
    pub n_inner: usize,
    pub n_mu: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub n_outer_used: usize,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingResult {
    pub estimate: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub budget: Budget,
    pub seed: u64,
    /// Running estimate after 16, 32, 64, … outer paths and at the end.
    pub trace: Vec<TracePoint>,
}

impl PricingResult {
    fn from_path_values(values: &[f64], budget: Budget, seed: u64) -> Self {
        let mut m = Moments::default();
        let mut trace = Vec::new();
        let mut next = 16;
        for (i, &v) in values.iter().enumerate() {
            m.push(v);
            let used = i + 1;
            if used == next || used == values.len() {
                trace.push(TracePoint {
                    n_outer_used: used,
                    estimate: m.mean,
                    std_error: m.std_error(),
                });
                if used == next {
                    next *= 2;
                }
            }
        }
        let std_error = m.std_error();
        Self {
            estimate: m.mean,
            std_error,
            ci95: (m.mean - 1.96 * std_error, m.mean + 1.96 * std_error),
            budget,
            seed,
            trace,
        }
    }

    pub fn estimate(&self) -> crate::stats::Estimate {
        crate::stats::Estimate {
            mean: self.estimate,
            std_error: self.std_error,
        }
    }

    /// Writes the convergence trace as `n_outer_used,estimate,std_error` rows.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "n_outer_used,estimate,std_error")?;
        for p in &self.trace {
            writeln!(out, "{},{},{}", p.n_outer_used, p.estimate, p.std_error)?;
        }
        Ok(())
    }
}

/// Paths on the simulation grid, shared when the model has no randomness.
pub(crate) struct PathSource<'a> {
    model: &'a IntensityModel,
    grid: TimeGrid,
    shared: Option<Arc<IntensityPath>>,
}

impl<'a> PathSource<'a> {
    pub(crate) fn new(model: &'a IntensityModel, horizon: f64, grid_points: usize) -> Result<Self> {
        model.validate()?;
        let grid = TimeGrid::uniform(horizon, grid_points)?;
        let shared = match model {
            IntensityModel::LogBrownian { .. } => None,
            _ => Some(Arc::new(simulate_path(model, &grid, &mut RandomStream::new(0, 0))?)),
        };
        Ok(Self { model, grid, shared })
    }

    pub(crate) fn path(&self, stream: &mut RandomStream) -> Result<Arc<IntensityPath>> {
        match &self.shared {
            Some(p) => Ok(Arc::clone(p)),
            None => Ok(Arc::new(simulate_path(self.model, &self.grid, stream)?)),
        }
    }
}

struct Engine<'a> {
    claim: &'a ClaimModel,
    kappa: f64,
    horizon: f64,
    numerics: &'a NumericsConfig,
    nodes: Vec<(f64, f64)>,
    paths: PathSource<'a>,
}

impl<'a> Engine<'a> {
    fn new(
        model: &'a IntensityModel,
        claim: &'a ClaimModel,
        contract: &Contract,
        numerics: &'a NumericsConfig,
    ) -> Result<Self> {
        contract.validate()?;
        numerics.validate()?;
        claim.pair.validate()?;
        Ok(Self {
            claim,
            kappa: contract.kappa,
            horizon: contract.horizon,
            numerics,
            nodes: numerics.quadrature.nodes(contract.horizon)?,
            paths: PathSource::new(model, contract.horizon, numerics.grid_points)?,
        })
    }

    fn budget(&self) -> Budget {
        Budget {
            n_outer: self.numerics.n_outer,
            n_inner: self.numerics.n_inner,
            n_mu: self.numerics.mu_count(),
            nodes: self.nodes.len(),
        }
    }

    /// Builds the block for outer path `index`.
    fn block(&self, index: usize) -> Result<(EmpiricalBlock, RandomStream)> {
        let base = RandomStream::new(self.numerics.seed, index as u64);
        let path = self.paths.path(&mut base.derive(TAG_PATH))?;
        let block = build_block(
            &path,
            self.claim,
            self.kappa,
            self.numerics.n_inner,
            &mut base.derive(TAG_INNER),
        )?;
        Ok((block, base.derive(TAG_MU)))
    }

    /// `∫_0^T e^{-κ(T-t)} ∫ g λ_t φ(f e^{-κ(T-t)}) μ dt` on one path.
    fn path_integral(
        &self,
        index: usize,
        block: &EmpiricalBlock,
        mu_stream: &mut RandomStream,
        phi: &dyn Fn(f64) -> Result<f64>,
    ) -> Result<f64> {
        let path = block.path();
        let mut total = 0.0;
        for &(t, w) in &self.nodes {
            let lambda = path.intensity_unchecked(t);
            let cum = path.cumulative_unchecked(t);
            let disc = (-self.kappa * (self.horizon - t)).exp();
            let mut node = 0.0;
            let mut visit = |weight: f64, eps: f64, theta: f64| -> Result<()> {
                let f = self.claim.f(t, cum, eps);
                let g = self.claim.g(t, cum, eps, theta);
                if !f.is_finite() || !g.is_finite() {
                    return Err(Error::Numeric {
                        t,
                        path: index,
                        detail: format!("claim maps returned f = {f}, g = {g} at Λ_t = {cum}, ε = {eps}"),
                    });
                }
                if weight * g * lambda != 0.0 {
                    node += weight * g * lambda * phi(f * disc)?;
                }
                Ok(())
            };
            match &self.numerics.mu {
                MuIntegration::MonteCarlo => {
                    let weight = 1.0 / self.numerics.n_mu as f64;
                    for _ in 0..self.numerics.n_mu {
                        let (eps, theta) = self.claim.pair.draw(mu_stream);
                        visit(weight, eps, theta)?;
                    }
                }
                MuIntegration::Rule { atoms } => {
                    for a in atoms {
                        visit(a.weight, a.eps, a.theta)?;
                    }
                }
            }
            total += w * disc * node;
        }
        if !total.is_finite() {
            return Err(Error::Numeric {
                t: self.horizon,
                path: index,
                detail: format!("path integral is {total}"),
            });
        }
        Ok(total)
    }

    /// Evaluates `per_path` on every outer path in parallel and reduces in
    /// path order.
    fn run<F>(&self, per_path: F) -> Result<Vec<f64>>
    where
        F: Fn(usize, &EmpiricalBlock, &mut RandomStream) -> Result<f64> + Sync,
    {
        let values: Vec<Result<f64>> = (0..self.numerics.n_outer)
            .into_par_iter()
            .map(|i| {
                let (block, mut mu) = self.block(i)?;
                per_path(i, &block, &mut mu)
            })
            .collect();
        values.into_iter().collect()
    }
}

/// Estimates `E[L̂_T h(L_T)]` with `h` taken from the contract.
pub fn malliavin_expectation(
    model: &IntensityModel,
    claim: &ClaimModel,
    contract: &Contract,
    numerics: &NumericsConfig,
) -> Result<PricingResult> {
    let engine = Engine::new(model, claim, contract, numerics)?;
    let h = contract.h();
    let values = engine.run(|i, block, mu| engine.path_integral(i, block, mu, &|x| block.phi(&h, x)))?;
    Ok(PricingResult::from_path_values(&values, engine.budget(), numerics.seed))
}

/// Stop-loss premium `E[L̂·h(L)] - K·P[L ∈ [K, M]] + (M - K)·P[L ≥ M]`.
///
/// The probability terms come from the same blocks as the expectation term
/// and are combined path by path, so the standard error accounts for their
/// correlation.
pub fn stop_loss_price(
    model: &IntensityModel,
    claim: &ClaimModel,
    contract: &Contract,
    numerics: &NumericsConfig,
) -> Result<PricingResult> {
    let (lower, upper, claim) = match contract.payoff {
        ContractPayoff::StopLoss { lower, upper } => {
            let mut c = claim.clone();
            c.payment = PaymentMap::FromSeverity;
            (lower, upper, c)
        }
        ContractPayoff::GeneralizedStopLoss { lower, upper } => (lower, upper, claim.clone()),
        ContractPayoff::Custom(_) => {
            return Err(Error::Argument("stop_loss_price needs a stop-loss contract".into()));
        }
    };
    let engine = Engine::new(model, &claim, contract, numerics)?;
    let h = contract.h();
    let tranche = contract.tranche_interval(lower, upper);
    let values = engine.run(|i, block, mu| {
        let expectation = engine.path_integral(i, block, mu, &|x| block.phi(&h, x))?;
        let mut v = expectation - lower * block.interval_probability(&tranche, 0.0);
        if upper.is_finite() {
            v += (upper - lower) * block.interval_probability(&Interval::at_least(upper), 0.0);
        }
        Ok(v)
    })?;
    Ok(PricingResult::from_path_values(&values, engine.budget(), numerics.seed))
}

/// Direction of a Jensen bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curvature {
    /// Convex `h`: the bound is a lower bound.
    Convex,
    /// Concave `h`: the bound is an upper bound.
    Concave,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JensenBound {
    pub curvature: Curvature,
    pub result: PricingResult,
}

/// The pricing formula with `φ^h(x)` replaced by `h(E[L_T | λ] + x)`.
///
/// Uses the same seeds and therefore the same blocks and mark draws as
/// [`malliavin_expectation`].
pub fn jensen_bound(
    model: &IntensityModel,
    claim: &ClaimModel,
    contract: &Contract,
    numerics: &NumericsConfig,
    curvature: Curvature,
) -> Result<JensenBound> {
    let engine = Engine::new(model, claim, contract, numerics)?;
    let h = contract.h();
    let values = engine.run(|i, block, mu| {
        let mean = block.mean();
        engine.path_integral(i, block, mu, &|x| {
            let z = mean + x;
            let v = h.eval(z);
            if v >= 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Payoff { at: z, value: v })
            }
        })
    })?;
    Ok(JensenBound {
        curvature,
        result: PricingResult::from_path_values(&values, engine.budget(), numerics.seed),
    })
}

/// The constant-intensity pricing formula
/// `λ0 ∫_0^T ∫ e^{-κ(T-t)} g φ_{λ0}(f e^{-κ(T-t)}) μ dt` on a single block.
pub fn cramer_lundberg_price(
    model: &IntensityModel,
    claim: &ClaimModel,
    contract: &Contract,
    numerics: &NumericsConfig,
) -> Result<f64> {
    if model.is_constant().is_none() {
        return Err(Error::Model(
            "the Cramér–Lundberg form needs a constant intensity".into(),
        ));
    }
    let single = NumericsConfig {
        n_outer: 1,
        ..numerics.clone()
    };
    let engine = Engine::new(model, claim, contract, &single)?;
    let h = contract.h();
    let (block, mut mu) = engine.block(0)?;
    engine.path_integral(0, &block, &mut mu, &|x| block.phi(&h, x))
}

/// `λ0·T·∫ x (F(M - x) - F((K - x)⁻)) μ(dx)` with `F` a lattice compound CDF.
///
/// `F` is a step function, so for continuous μ the integrand is piecewise
/// constant in `x` and the integral reduces to partial expectations of μ
/// between the steps. A point-mass μ is evaluated directly.
pub fn cramer_lundberg_lattice(
    lambda0: f64,
    horizon: f64,
    lower: f64,
    upper: f64,
    severity: &MarginalSpec,
    compound: &CompoundTable,
) -> Result<f64> {
    severity.validate()?;
    if let MarginalSpec::Constant { value } = *severity {
        return Ok(lambda0 * horizon * value * compound.probability_closed(lower - value, upper - value));
    }
    let step = compound.step();
    let top = if upper.is_finite() {
        upper
    } else {
        severity.quantile(1.0 - 1e-16)
    };
    let mut cuts = vec![0.0, top];
    for edge in [lower, upper] {
        if !edge.is_finite() {
            continue;
        }
        let mut k = 0.0;
        while edge - k * step > 0.0 {
            let b = edge - k * step;
            if b < top {
                cuts.push(b);
            }
            k += 1.0;
        }
    }
    if let MarginalSpec::Pareto { scale, .. } = *severity {
        if scale < top {
            cuts.push(scale);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let cdf = |x: f64| severity.cdf(x);
    let mut total = CompensatedSum::default();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let g = compound.cdf(upper - mid) - compound.cdf_below(lower - mid);
        if g == 0.0 {
            continue;
        }
        // ∫_a^b x μ(dx) = b F(b) - a F(a) - ∫_a^b F.
        let area = adaptive_gk(&cdf, a, b, 1e-15, 1e-13).value;
        total.add(g * (b * cdf(b) - a * cdf(a) - area));
    }
    Ok(lambda0 * horizon * total.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatticePrice {
    /// Price at the requested lattice step.
    pub value: f64,
    /// Price at twice the step.
    pub coarse_value: f64,
    /// `|value - coarse_value|`. The scheme converges at second order, so
    /// this overstates the error of `value` roughly threefold.
    pub discretization_bound: f64,
}

/// `E[L_T 1{L_T ∈ [K, M]}]` for constant intensity, `f = g = x` and `κ = 0`,
/// with the compound CDF from the Panjer recursion on a midpoint-discretized
/// severity with lattice step `step`.
pub fn cramer_lundberg_closed_form(
    lambda0: f64,
    horizon: f64,
    lower: f64,
    upper: f64,
    severity: &MarginalSpec,
    step: f64,
) -> Result<LatticePrice> {
    ensure_positive("lambda0", lambda0)?;
    ensure_positive("horizon", horizon)?;
    if lower.is_nan() || upper.is_nan() || lower > upper {
        return Err(Error::Argument(format!("tranche [{lower}, {upper}] needs K <= M")));
    }
    let price = |h: f64| -> Result<f64> {
        let sev = DiscretizedSeverity::from_marginal(severity, h, Discretization::Midpoint, 1e-15)?;
        let table = panjer_auto(lambda0 * horizon, &sev)?;
        cramer_lundberg_lattice(lambda0, horizon, lower, upper, severity, &table)
    };
    let value = price(step)?;
    let coarse_value = price(2.0 * step)?;
    Ok(LatticePrice {
        value,
        coarse_value,
        discretization_bound: (value - coarse_value).abs(),
    })
}

/// Checks that a claim model fits the closed lattice form.
pub fn supports_closed_form(model: &IntensityModel, claim: &ClaimModel, contract: &Contract) -> Result<f64> {
    let lambda0 = model
        .is_constant()
        .ok_or_else(|| Error::Model("the closed form needs a constant intensity".into()))?;
    if contract.kappa != 0.0 {
        return Err(Error::Model("the closed form needs kappa = 0".into()));
    }
    if !matches!(claim.severity, SeverityMap::Identity) || !matches!(claim.payment, PaymentMap::FromSeverity) {
        return Err(Error::Model("the closed form needs f = g = x".into()));
    }
    Ok(lambda0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::ClaimPairSpec;

    fn exp_claims() -> ClaimModel {
        ClaimModel::new(
            SeverityMap::Identity,
            PaymentMap::FromSeverity,
            ClaimPairSpec::diagonal(MarginalSpec::Exponential { rate: 1.0 }),
        )
    }

    fn small() -> NumericsConfig {
        NumericsConfig {
            n_outer: 200,
            n_inner: 400,
            n_mu: 16,
            quadrature: TimeQuadrature::GaussLegendre { nodes: 16 },
            grid_points: 129,
            seed: 3,
            mu: MuIntegration::MonteCarlo,
        }
    }

    fn constant() -> IntensityModel {
        IntensityModel::Constant { lambda0: 1.0 }
    }

    #[test]
    fn unit_payoff_reduces_to_discounted_intensity() {
        let contract = Contract::new(1.0, 1.0, ContractPayoff::Custom(Payoff::Constant(1.0)));
        let numerics = NumericsConfig {
            mu: MuIntegration::exponential_diagonal(1.0, 16).unwrap(),
            ..small()
        };
        let r = malliavin_expectation(&constant(), &exp_claims(), &contract, &numerics).unwrap();
        assert!((r.estimate - (1.0 - (-1.0f64).exp())).abs() < 1e-12, "{}", r.estimate);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn unit_payoff_with_sampled_marks() {
        let contract = Contract::new(1.0, 1.0, ContractPayoff::Custom(Payoff::Constant(1.0)));
        let r = malliavin_expectation(&constant(), &exp_claims(), &contract, &small()).unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        assert!((r.estimate - exact).abs() < 3.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn zero_payoff_is_exactly_zero() {
        let contract = Contract::new(1.0, 0.5, ContractPayoff::Custom(Payoff::Constant(0.0)));
        let r = malliavin_expectation(&constant(), &exp_claims(), &contract, &small()).unwrap();
        assert_eq!((r.estimate, r.std_error), (0.0, 0.0));
    }

    #[test]
    fn zero_payment_is_exactly_zero() {
        let mut claims = exp_claims();
        claims.payment = PaymentMap::Zero;
        let contract = Contract::new(1.0, 0.0, ContractPayoff::Custom(Payoff::indicator(1.0, 2.0)));
        let r = malliavin_expectation(&constant(), &claims, &contract, &small()).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(
            cramer_lundberg_price(&constant(), &claims, &contract, &small()).unwrap(),
            0.0
        );
    }

    #[test]
    fn ci_and_trace() {
        let contract = Contract::new(1.0, 0.0, ContractPayoff::Custom(Payoff::indicator(1.0, 2.0)));
        let r = malliavin_expectation(&constant(), &exp_claims(), &contract, &small()).unwrap();
        assert_eq!(
            r.ci95,
            (r.estimate - 1.96 * r.std_error, r.estimate + 1.96 * r.std_error)
        );
        let used: Vec<usize> = r.trace.iter().map(|p| p.n_outer_used).collect();
        assert_eq!(used, vec![16, 32, 64, 128, 200]);
        assert_eq!(r.trace.last().unwrap().estimate, r.estimate);
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("n_outer_used,estimate,std_error\n16,"));
    }

    #[test]
    fn scaled_severity_at_time_zero_is_reported() {
        let mut claims = exp_claims();
        claims.severity = SeverityMap::Scaled;
        let contract = Contract::new(1.0, 0.0, ContractPayoff::Custom(Payoff::indicator(1.0, 2.0)));
        let numerics = NumericsConfig {
            quadrature: TimeQuadrature::Trapezoid { nodes: 9 },
            ..small()
        };
        match malliavin_expectation(&constant(), &claims, &contract, &numerics) {
            Err(Error::Numeric { t, path, .. }) => assert_eq!((t, path), (0.0, 0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tranches_add_up_on_shared_randomness() {
        let price = |k: f64, m: f64| {
            let mut c = Contract::new(
                1.0,
                0.0,
                ContractPayoff::Custom(Payoff::Indicator(Interval::half_open(k, m))),
            );
            c.tranche = Tranche::HalfOpen;
            malliavin_expectation(&constant(), &exp_claims(), &c, &small())
                .unwrap()
                .estimate
        };
        let (a, b, whole) = (price(0.5, 1.2), price(1.2, 3.0), price(0.5, 3.0));
        assert!((a + b - whole).abs() < 1e-12, "{a} + {b} vs {whole}");
    }

    #[test]
    fn expectation_term_monotone_in_tranche() {
        let price = |k: f64, m: f64| {
            let c = Contract::new(1.0, 0.0, ContractPayoff::Custom(Payoff::indicator(k, m)));
            malliavin_expectation(&constant(), &exp_claims(), &c, &small())
                .unwrap()
                .estimate
        };
        assert!(price(1.0, 2.0) >= price(1.5, 2.0));
        assert!(price(1.0, 2.5) >= price(1.0, 2.0));
    }

    #[test]
    fn uncapped_stop_loss_from_zero_is_mean_loss() {
        let contract = Contract::new(
            1.0,
            0.0,
            ContractPayoff::StopLoss {
                lower: 0.0,
                upper: f64::INFINITY,
            },
        );
        let r = stop_loss_price(&constant(), &exp_claims(), &contract, &small()).unwrap();
        assert!((r.estimate - 1.0).abs() < 3.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn degenerate_tranche_prices_to_zero() {
        let contract = Contract::new(1.0, 0.0, ContractPayoff::StopLoss { lower: 1.5, upper: 1.5 });
        let r = stop_loss_price(&constant(), &exp_claims(), &contract, &small()).unwrap();
        assert_eq!(r.estimate, 0.0);
    }

    #[test]
    fn stop_loss_rejects_inverted_tranche() {
        let contract = Contract::new(1.0, 0.0, ContractPayoff::StopLoss { lower: 2.0, upper: 1.0 });
        assert!(matches!(
            stop_loss_price(&constant(), &exp_claims(), &contract, &small()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn scenario_value_matches_payoff_for_half_open_tranche() {
        let mut c = Contract::new(1.0, 0.0, ContractPayoff::StopLoss { lower: 1.0, upper: 2.0 });
        c.tranche = Tranche::HalfOpen;
        for l in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 7.0] {
            assert_eq!(c.scenario_value(l, l), stop_loss_payoff(l, 1.0, 2.0), "at {l}");
        }
        c.tranche = Tranche::Closed;
        // The closed tranche counts the atom at M in both terms.
        assert_eq!(c.scenario_value(2.0, 2.0), 2.0);
    }

    #[test]
    fn non_constant_model_is_rejected() {
        let contract = Contract::new(1.0, 0.0, ContractPayoff::Custom(Payoff::indicator(1.0, 2.0)));
        let model = IntensityModel::LogBrownian {
            lambda0: 1.0,
            beta: 0.5,
        };
        assert!(matches!(
            cramer_lundberg_price(&model, &exp_claims(), &contract, &small()),
            Err(Error::Model(_))
        ));
        assert!(matches!(
            supports_closed_form(&model, &exp_claims(), &contract),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn closed_form_point_mass_full_range() {
        let p = cramer_lundberg_closed_form(
            1.5,
            2.0,
            0.0,
            f64::INFINITY,
            &MarginalSpec::Constant { value: 2.0 },
            0.5,
        )
        .unwrap();
        assert!((p.value - 1.5 * 2.0 * 2.0).abs() < 1e-9, "{p:?}");
        assert!(p.discretization_bound < 1e-9);
    }

    // Σ_n e^{-1}/n! ∫_1^2 x Γ(n, 1)(dx) by scipy quadrature.
    const EXP_TRANCHE: f64 = 0.2367631531471446;

    #[test]
    fn closed_form_matches_gamma_mixture() {
        let p =
            cramer_lundberg_closed_form(1.0, 1.0, 1.0, 2.0, &MarginalSpec::Exponential { rate: 1.0 }, 0.01).unwrap();
        assert!((p.value - EXP_TRANCHE).abs() < p.discretization_bound, "{p:?}");
        assert!(p.discretization_bound < 1e-5);
    }

    #[test]
    fn closed_form_uncapped_is_mean_loss() {
        let p = cramer_lundberg_closed_form(
            2.0,
            1.0,
            0.0,
            f64::INFINITY,
            &MarginalSpec::Gamma { shape: 2.0, rate: 4.0 },
            0.01,
        )
        .unwrap();
        assert!((p.value - 1.0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn closed_form_agrees_with_single_block_form() {
        let contract = Contract::new(1.0, 0.0, ContractPayoff::Custom(Payoff::indicator(1.0, 2.0)));
        let numerics = NumericsConfig {
            n_inner: 200_000,
            n_mu: 256,
            quadrature: TimeQuadrature::GaussLegendre { nodes: 32 },
            ..small()
        };
        let block = cramer_lundberg_price(&constant(), &exp_claims(), &contract, &numerics).unwrap();
        // One block of 2·10^5 losses and 8192 mark draws: a few 10^-3 of noise.
        assert!((block - EXP_TRANCHE).abs() < 0.01, "{block}");
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let contract = Contract::new(1.0, 0.3, ContractPayoff::StopLoss { lower: 0.5, upper: 2.0 });
        let model = IntensityModel::LogBrownian {
            lambda0: 1.0,
            beta: 0.5,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| stop_loss_price(&model, &exp_claims(), &contract, &small()).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn affine_jensen_bound_is_tight() {
        let contract = Contract::new(1.0, 0.2, ContractPayoff::Custom(Payoff::Affine { a: 2.0, b: 0.5 }));
        let est = malliavin_expectation(&constant(), &exp_claims(), &contract, &small()).unwrap();
        let bound = jensen_bound(&constant(), &exp_claims(), &contract, &small(), Curvature::Convex).unwrap();
        assert!((est.estimate - bound.result.estimate).abs() < 1e-12 * est.estimate.abs());
    }

    #[test]
    fn jensen_orders_per_path() {
        let model = IntensityModel::LogBrownian {
            lambda0: 1.0,
            beta: 0.5,
        };
        for (h, curvature) in [(Payoff::Square, Curvature::Convex), (Payoff::Sqrt, Curvature::Concave)] {
            let contract = Contract::new(1.0, 0.0, ContractPayoff::Custom(h));
            let est = malliavin_expectation(&model, &exp_claims(), &contract, &small()).unwrap();
            let bound = jensen_bound(&model, &exp_claims(), &contract, &small(), curvature)
                .unwrap()
                .result;
            // Same blocks and mark draws: the ordering holds estimate by estimate.
            match curvature {
                Curvature::Convex => assert!(bound.estimate <= est.estimate),
                Curvature::Concave => assert!(bound.estimate >= est.estimate),
            }
        }
    }

    #[test]
    fn numerics_validation() {
        let contract = Contract::new(1.0, 0.0, ContractPayoff::Custom(Payoff::Constant(1.0)));
        let bad = NumericsConfig { n_inner: 0, ..small() };
        assert!(matches!(
            malliavin_expectation(&constant(), &exp_claims(), &contract, &bad),
            Err(Error::Parameter(_))
        ));
        let bad = Contract::new(0.0, 0.0, ContractPayoff::Custom(Payoff::Constant(1.0)));
        assert!(malliavin_expectation(&constant(), &exp_claims(), &bad, &small()).is_err());
    }
}
