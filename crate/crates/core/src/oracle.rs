//! Independent validation: brute-force pricing, the integration-by-parts
//! identity, equality in law of the added-jump vectors, and exact Poisson sums.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::IntensityModel;
use crate::loss::{
    add_jump, add_jump_with, generalized_loss_at_t, loss_at_t, simulate_jumps, ClaimModel, LossScenario, MarkIndexing,
};
use crate::payoff::Payoff;
use crate::pricing::{
    cramer_lundberg_closed_form, malliavin_expectation, supports_closed_form, Contract, ContractPayoff, NumericsConfig,
    PathSource,
};
use crate::quadrature::TimeQuadrature;
use crate::rng::RandomStream;
use crate::stats::{ks_two_sample, ks_two_sample_2d, Estimate, Moments};

/// Significance level of every KS comparison.
pub const SIGNIFICANCE: f64 = 0.01;
/// Largest accepted discrepancy, in combined standard errors.
pub const SE_THRESHOLD: f64 = 3.0;

const CHUNK: usize = 4096;
const TAG_DIRECT: u64 = 7;
const TAG_IPP_LEFT: u64 = 8;
const TAG_IPP_RIGHT: u64 = 9;
const TAG_LAW_LEFT: u64 = 10;
const TAG_LAW_RIGHT: u64 = 11;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsComparison {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `|lhs - rhs|` less any allowed bias, in combined standard errors.
    pub discrepancy: f64,
    /// The rule `passed` was decided by.
    pub criterion: String,
    pub passed: bool,
    pub seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ks: Vec<KsComparison>,
}

impl CheckReport {
    /// Passes when the estimates agree within [`SE_THRESHOLD`] combined
    /// standard errors plus `allowance`.
    pub fn compare(name: impl Into<String>, lhs: Estimate, rhs: Estimate, allowance: f64, seed: u64) -> Self {
        let discrepancy = lhs.z_distance(&rhs, allowance);
        let criterion = if allowance > 0.0 {
            format!("|lhs - rhs| <= {SE_THRESHOLD} combined SE + {allowance:e}")
        } else {
            format!("|lhs - rhs| <= {SE_THRESHOLD} combined SE")
        };
        Self {
            name: name.into(),
            lhs,
            rhs,
            discrepancy,
            criterion,
            passed: discrepancy <= SE_THRESHOLD,
            seed,
            ks: Vec::new(),
        }
    }
}

/// Simulation settings shared by the checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSettings {
    pub horizon: f64,
    pub kappa: f64,
    pub grid_points: usize,
    pub quadrature: TimeQuadrature,
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            kappa: 0.0,
            grid_points: 1_025,
            quadrature: TimeQuadrature::default(),
            seed: 0,
        }
    }
}

/// Runs `body` over `n` items split in fixed chunks, each chunk on its own
/// stream, and returns the chunk results in order.
fn chunked<T, F>(n: usize, seed: u64, tag: u64, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut RandomStream, usize) -> Result<T> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let out: Vec<Result<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream = RandomStream::new(seed, c as u64).derive(tag);
            body(&mut stream, CHUNK.min(n - c * CHUNK))
        })
        .collect();
    out.into_iter().collect()
}

fn merge(parts: &[Moments]) -> Moments {
    let mut m = Moments::default();
    for p in parts {
        m.merge(p);
    }
    m
}

/// `n` unconditional draws of `(L_T, L̂_T)`, in a thread-independent order.
pub fn simulate_losses(
    model: &IntensityModel,
    claim: &ClaimModel,
    horizon: f64,
    kappa: f64,
    n: usize,
    grid_points: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    claim.pair.validate()?;
    let paths = PathSource::new(model, horizon, grid_points)?;
    let parts = chunked(n, seed, TAG_DIRECT, |stream, count| {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let path = paths.path(stream)?;
            let sc = simulate_jumps(&path, &claim.pair, stream)?;
            out.push((loss_at_t(&sc, claim, kappa), generalized_loss_at_t(&sc, claim, kappa)));
        }
        Ok(out)
    })?;
    Ok(parts.concat())
}

/// Prices the contract by averaging its per-scenario value over `n` full
/// simulations; see [`Contract::scenario_value`].
pub fn direct_mc_price(
    model: &IntensityModel,
    claim: &ClaimModel,
    contract: &Contract,
    n: usize,
    grid_points: usize,
    seed: u64,
) -> Result<Estimate> {
    contract.validate()?;
    if n < 2 {
        return Err(Error::Argument("direct pricing needs at least two scenarios".into()));
    }
    claim.pair.validate()?;
    let paths = PathSource::new(model, contract.horizon, grid_points)?;
    let parts = chunked(n, seed, TAG_DIRECT, |stream, count| {
        let mut m = Moments::default();
        for _ in 0..count {
            let path = paths.path(stream)?;
            let sc = simulate_jumps(&path, &claim.pair, stream)?;
            let loss = loss_at_t(&sc, claim, contract.kappa);
            let paid = generalized_loss_at_t(&sc, claim, contract.kappa);
            let v = contract.scenario_value(loss, paid);
            if !v.is_finite() {
                return Err(Error::Payoff { at: loss, value: v });
            }
            m.push(v);
        }
        Ok(m)
    })?;
    Ok(merge(&parts).estimate())
}

pub type ScenarioFn = Arc<dyn Fn(&LossScenario, f64) -> f64 + Send + Sync>;

/// A bounded functional `F(ω)` of a scenario and its loss `L_T`.
#[derive(Clone)]
pub enum Functional {
    One,
    /// `exp(-L_T)`.
    ExpNegLoss,
    /// `1{L_T ≤ c}`.
    LossAtMost(f64),
    /// A user functional with its declared bound `|F| ≤ bound`.
    Custom {
        name: String,
        f: ScenarioFn,
        bound: f64,
    },
}

impl Functional {
    pub fn label(&self) -> String {
        match self {
            Functional::One => "1".into(),
            Functional::ExpNegLoss => "exp(-L_T)".into(),
            Functional::LossAtMost(c) => format!("1{{L_T <= {c}}}"),
            Functional::Custom { name, .. } => name.clone(),
        }
    }

    fn eval(&self, sc: &LossScenario, loss: f64) -> Result<f64> {
        let (v, bound) = match self {
            Functional::One => (1.0, 1.0),
            Functional::ExpNegLoss => ((-loss).exp(), 1.0),
            Functional::LossAtMost(c) => (if loss <= *c { 1.0 } else { 0.0 }, 1.0),
            Functional::Custom { f, bound, .. } => (f(sc, loss), *bound),
        };
        if v.is_finite() && v.abs() <= bound {
            Ok(v)
        } else {
            Err(Error::ContractViolation(format!(
                "functional {} returned {v}, outside its bound {bound}",
                self.label()
            )))
        }
    }
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Functional({})", self.label())
    }
}

/// A deterministic, hence predictable, integrand `u_t`.
#[derive(Clone)]
pub enum Integrand {
    One,
    /// `e^{-κ(T - t)}`.
    Discount,
    Zero,
    Custom {
        name: String,
        u: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl Integrand {
    pub fn label(&self) -> String {
        match self {
            Integrand::One => "1".into(),
            Integrand::Discount => "exp(-kappa(T-t))".into(),
            Integrand::Zero => "0".into(),
            Integrand::Custom { name, .. } => name.clone(),
        }
    }

    fn eval(&self, t: f64, horizon: f64, kappa: f64) -> f64 {
        match self {
            Integrand::One => 1.0,
            Integrand::Discount => (-kappa * (horizon - t)).exp(),
            Integrand::Zero => 0.0,
            Integrand::Custom { u, .. } => u(t),
        }
    }
}

impl fmt::Debug for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Integrand({})", self.label())
    }
}

/// Checks `E[F ∫ u dN] = E[∫ u_t F(ω ∪ {t}) λ_t dt]` for one `(F, u)`.
pub fn ipp_check(
    model: &IntensityModel,
    claim: &ClaimModel,
    settings: &CheckSettings,
    functional: &Functional,
    integrand: &Integrand,
    n: usize,
) -> Result<CheckReport> {
    let mut reports = ipp_check_grid(
        model,
        claim,
        settings,
        std::slice::from_ref(functional),
        std::slice::from_ref(integrand),
        n,
    )?;
    Ok(reports.remove(0))
}

/// [`ipp_check`] for every `(F, u)` combination on shared scenarios.
///
/// The left side averages `F(ω) Σ_i u(τ_i)` over direct simulations; the right
/// side, on independent scenarios, integrates `u_t F(ω ∪ {t}) λ_t` over the
/// time quadrature with a fresh mark for every inserted jump.
pub fn ipp_check_grid(
    model: &IntensityModel,
    claim: &ClaimModel,
    settings: &CheckSettings,
    functionals: &[Functional],
    integrands: &[Integrand],
    n: usize,
) -> Result<Vec<CheckReport>> {
    if functionals.is_empty() || integrands.is_empty() {
        return Err(Error::Argument("empty check list".into()));
    }
    if n < 2 {
        return Err(Error::Argument("the check needs at least two scenarios".into()));
    }
    claim.pair.validate()?;
    let (horizon, kappa) = (settings.horizon, settings.kappa);
    let paths = PathSource::new(model, horizon, settings.grid_points)?;
    let nodes = settings.quadrature.nodes(horizon)?;
    let (nf, nu) = (functionals.len(), integrands.len());

    let left = chunked(n, settings.seed, TAG_IPP_LEFT, |stream, count| {
        let mut acc = vec![Moments::default(); nf * nu];
        for _ in 0..count {
            let path = paths.path(stream)?;
            let sc = simulate_jumps(&path, &claim.pair, stream)?;
            let loss = loss_at_t(&sc, claim, kappa);
            let sums: Vec<f64> = integrands
                .iter()
                .map(|u| {
                    sc.jump_times()
                        .iter()
                        .map(|&t| u.eval(t, horizon, kappa))
                        .fold(0.0, |a, b| a + b)
                })
                .collect();
            for (a, f) in functionals.iter().enumerate() {
                let fv = f.eval(&sc, loss)?;
                for (b, s) in sums.iter().enumerate() {
                    acc[a * nu + b].push(fv * s);
                }
            }
        }
        Ok(acc)
    })?;

    let right = chunked(n, settings.seed, TAG_IPP_RIGHT, |stream, count| {
        let mut acc = vec![Moments::default(); nf * nu];
        let mut sample = vec![0.0; nf * nu];
        for _ in 0..count {
            let path = paths.path(stream)?;
            let sc = simulate_jumps(&path, &claim.pair, stream)?;
            sample.iter_mut().for_each(|v| *v = 0.0);
            for &(t, w) in &nodes {
                let mark = claim.pair.draw(stream);
                let bumped = add_jump(&sc, t, mark)?;
                let loss = loss_at_t(&bumped, claim, kappa);
                let lambda = path.intensity_at(t)?;
                for (a, f) in functionals.iter().enumerate() {
                    let fv = f.eval(&bumped, loss)?;
                    for (b, u) in integrands.iter().enumerate() {
                        sample[a * nu + b] += w * u.eval(t, horizon, kappa) * lambda * fv;
                    }
                }
            }
            for (m, &v) in acc.iter_mut().zip(&sample) {
                m.push(v);
            }
        }
        Ok(acc)
    })?;

    let collect = |parts: &[Vec<Moments>], k: usize| {
        let column: Vec<Moments> = parts.iter().map(|p| p[k]).collect();
        merge(&column).estimate()
    };
    let mut reports = Vec::with_capacity(nf * nu);
    for (a, f) in functionals.iter().enumerate() {
        for (b, u) in integrands.iter().enumerate() {
            let k = a * nu + b;
            reports.push(CheckReport::compare(
                format!("ipp F={} u={}", f.label(), u.label()),
                collect(&left, k),
                collect(&right, k),
                0.0,
                settings.seed,
            ));
        }
    }
    Ok(reports)
}

/// Compares in law the vectors
/// `(g(t, Λ_t, ε_{1+N_t}, ϑ_{1+N_t}) e^{-κ(T-t)}, L_T(ω ∪ {t}), λ_t)` and
/// `(g(t, Λ_t, ε̄, ϑ̄) e^{-κ(T-t)}, L_T + f(t, Λ_t, ε̄) e^{-κ(T-t)}, λ_t)`
/// with three one-dimensional and three two-dimensional two-sample KS tests.
///
/// `indexing` selects how marks follow the inserted jump;
/// [`MarkIndexing::Unshifted`] is the negative control and should fail.
pub fn lemma_law_check(
    model: &IntensityModel,
    claim: &ClaimModel,
    settings: &CheckSettings,
    t: f64,
    n: usize,
    indexing: MarkIndexing,
) -> Result<CheckReport> {
    let (horizon, kappa) = (settings.horizon, settings.kappa);
    if !(t > 0.0 && t < horizon) {
        return Err(Error::Domain(format!("check time {t} outside (0, {horizon})")));
    }
    if n < 2 {
        return Err(Error::Argument("the check needs at least two scenarios".into()));
    }
    claim.pair.validate()?;
    let paths = PathSource::new(model, horizon, settings.grid_points)?;
    let disc = (-kappa * (horizon - t)).exp();

    let left = chunked(n, settings.seed, TAG_LAW_LEFT, |stream, count| {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let path = paths.path(stream)?;
            let sc = simulate_jumps(&path, &claim.pair, stream)?;
            let extra = claim.pair.draw(stream);
            let bumped = add_jump_with(&sc, t, extra, indexing)?;
            let (eps, theta) = bumped.marks()[sc.count_until(t)];
            let cum = path.cumulative_at(t)?;
            out.push([
                claim.g(t, cum, eps, theta) * disc,
                loss_at_t(&bumped, claim, kappa),
                path.intensity_at(t)?,
            ]);
        }
        Ok(out)
    })?
    .concat();

    let right = chunked(n, settings.seed, TAG_LAW_RIGHT, |stream, count| {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let path = paths.path(stream)?;
            let sc = simulate_jumps(&path, &claim.pair, stream)?;
            let (eps, theta) = claim.pair.draw(stream);
            let cum = path.cumulative_at(t)?;
            out.push([
                claim.g(t, cum, eps, theta) * disc,
                loss_at_t(&sc, claim, kappa) + claim.f(t, cum, eps) * disc,
                path.intensity_at(t)?,
            ]);
        }
        Ok(out)
    })?
    .concat();

    let labels = ["paid", "loss", "intensity"];
    let mut ks = Vec::new();
    for i in 0..3 {
        let a: Vec<f64> = left.iter().map(|v| v[i]).collect();
        let b: Vec<f64> = right.iter().map(|v| v[i]).collect();
        let r = ks_two_sample(&a, &b);
        ks.push(KsComparison {
            name: labels[i].into(),
            statistic: r.statistic,
            p_value: r.p_value,
            passed: r.passes(SIGNIFICANCE),
        });
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let a: Vec<(f64, f64)> = left.iter().map(|v| (v[i], v[j])).collect();
        let b: Vec<(f64, f64)> = right.iter().map(|v| (v[i], v[j])).collect();
        let r = ks_two_sample_2d(&a, &b);
        ks.push(KsComparison {
            name: format!("{}/{}", labels[i], labels[j]),
            statistic: r.statistic,
            p_value: r.p_value,
            passed: r.passes(SIGNIFICANCE),
        });
    }
    let mean = |s: &[[f64; 3]]| s.iter().map(|v| v[1]).collect::<Moments>().estimate();
    let (lhs, rhs) = (mean(&left), mean(&right));
    let passed = ks.iter().all(|k| k.passed);
    let suffix = match indexing {
        MarkIndexing::ByJumpOrder => "",
        MarkIndexing::Unshifted => " (unshifted marks)",
    };
    Ok(CheckReport {
        name: format!("law of added jump at t={t}{suffix}"),
        discrepancy: lhs.z_distance(&rhs, 0.0),
        lhs,
        rhs,
        criterion: format!("all six KS p-values >= {SIGNIFICANCE}"),
        passed,
        seed: settings.seed,
        ks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoissonReference {
    /// `P[N < β]`.
    pub p_below: f64,
    /// `E[N 1{N < β}] = λΛ·P[N ≤ β - 2]`.
    pub truncated_mean: f64,
}

/// Exact truncated sums for `N ~ Poisson(mean)`.
pub fn poisson_reference(mean: f64, beta: f64) -> Result<PoissonReference> {
    crate::error::ensure_positive("mean", mean)?;
    if beta.is_nan() {
        return Err(Error::Argument("threshold is NaN".into()));
    }
    if beta <= 0.0 {
        return Ok(PoissonReference {
            p_below: 0.0,
            truncated_mean: 0.0,
        });
    }
    // N < β  ⇔  N ≤ ⌈β⌉ - 1.
    let last = if beta.is_finite() {
        beta.ceil() - 1.0
    } else {
        f64::INFINITY
    };
    let cdf_until = |top: f64| {
        if top < 0.0 {
            return 0.0;
        }
        let mut p = (-mean).exp();
        let mut total = p;
        let mut k = 0.0;
        while k < top {
            k += 1.0;
            p *= mean / k;
            total += p;
            if k > mean && p < f64::EPSILON * 1e-3 * total {
                break;
            }
        }
        total
    };
    Ok(PoissonReference {
        p_below: cdf_until(last),
        truncated_mean: mean * cdf_until(last - 1.0),
    })
}

/// Cross-checks the pricing formula, direct simulation and the lattice closed
/// form on an interval payoff under constant intensity with `f = g = x` and
/// `κ = 0`.
pub fn pricing_agreement(
    model: &IntensityModel,
    claim: &ClaimModel,
    contract: &Contract,
    numerics: &NumericsConfig,
    n_direct: usize,
    step: f64,
) -> Result<Vec<CheckReport>> {
    let lambda0 = supports_closed_form(model, claim, contract)?;
    let (lower, upper) = match contract.h() {
        Payoff::Indicator(i) if i.lower_closed && i.upper_closed => (i.lower, i.upper),
        other => {
            return Err(Error::Argument(format!(
                "pricing agreement needs a closed interval indicator, got {other:?}"
            )))
        }
    };
    let expectation = Contract {
        payoff: ContractPayoff::Custom(contract.h()),
        ..contract.clone()
    };
    let malliavin = malliavin_expectation(model, claim, &expectation, numerics)?.estimate();
    let direct = direct_mc_price(
        model,
        claim,
        &expectation,
        n_direct,
        numerics.grid_points,
        numerics.seed,
    )?;
    let lattice = cramer_lundberg_closed_form(lambda0, contract.horizon, lower, upper, &claim.pair.marginal_eps, step)?;
    let exact = Estimate::exact(lattice.value);
    let bound = lattice.discretization_bound;
    let seed = numerics.seed;
    Ok(vec![
        CheckReport::compare("pricing formula vs direct simulation", malliavin, direct, 0.0, seed),
        CheckReport::compare("pricing formula vs lattice closed form", malliavin, exact, bound, seed),
        CheckReport::compare("direct simulation vs lattice closed form", direct, exact, bound, seed),
    ])
}
