//! Cox-process jump simulation, claim marks, and the losses `L_T` and `L̂_T`.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand_distr::{Distribution, Poisson};

use crate::copula::ClaimPairSpec;
use crate::error::{Error, Result};
use crate::intensity::IntensityPath;
use crate::rng::RandomStream;

pub type SeverityFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type PaymentFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Claim size `f(t, ℓ, x)` that triggers the contract.
#[derive(Clone)]
pub enum SeverityMap {
    /// `f(t, ℓ, x) = x`.
    Identity,
    /// `f(t, ℓ, x) = sqrt(ℓ / t) · x`; only defined for `t > 0`.
    Scaled,
    Custom(SeverityFn),
}

impl SeverityMap {
    #[inline]
    pub fn eval(&self, t: f64, cum: f64, x: f64) -> f64 {
        match self {
            SeverityMap::Identity => x,
            SeverityMap::Scaled => (cum / t).sqrt() * x,
            SeverityMap::Custom(f) => f(t, cum, x),
        }
    }
}

impl fmt::Debug for SeverityMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeverityMap::Identity => write!(f, "Identity"),
            SeverityMap::Scaled => write!(f, "Scaled"),
            SeverityMap::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Paid amount `g(t, ℓ, x, y)`.
#[derive(Clone)]
pub enum PaymentMap {
    /// `g(t, ℓ, x, y) = f(t, ℓ, x)`: the generalized loss is the loss itself.
    FromSeverity,
    /// `g(t, ℓ, x, y) = y`.
    IdentityY,
    Zero,
    Custom(PaymentFn),
}

impl fmt::Debug for PaymentMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PaymentMap::FromSeverity => write!(f, "FromSeverity"),
            PaymentMap::IdentityY => write!(f, "IdentityY"),
            PaymentMap::Zero => write!(f, "Zero"),
            PaymentMap::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// The maps f and g together with the mark law μ.
#[derive(Debug, Clone)]
pub struct ClaimModel {
    pub severity: SeverityMap,
    pub payment: PaymentMap,
    pub pair: ClaimPairSpec,
}

impl ClaimModel {
    pub fn new(severity: SeverityMap, payment: PaymentMap, pair: ClaimPairSpec) -> Self {
        Self {
            severity,
            payment,
            pair,
        }
    }

    #[inline]
    pub fn f(&self, t: f64, cum: f64, x: f64) -> f64 {
        self.severity.eval(t, cum, x)
    }

    #[inline]
    pub fn g(&self, t: f64, cum: f64, x: f64, y: f64) -> f64 {
        match &self.payment {
            PaymentMap::FromSeverity => self.severity.eval(t, cum, x),
            PaymentMap::IdentityY => y,
            PaymentMap::Zero => 0.0,
            PaymentMap::Custom(g) => g(t, cum, x, y),
        }
    }
}

/// Jump times and marks attached to one intensity path.
///
/// Marks are attached by jump order: the i-th jump in time carries `marks[i]`.
#[derive(Debug, Clone)]
pub struct LossScenario {
    path: Arc<IntensityPath>,
    jump_times: Vec<f64>,
    marks: Vec<(f64, f64)>,
}

/// How [`add_jump`] re-indexes marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarkIndexing {
    /// Marks stay attached to jump order; the supplied mark extends the
    /// sequence. The inserted jump therefore carries `ε_{1+N_t}` and later
    /// jumps carry the next mark in the sequence.
    #[default]
    ByJumpOrder,
    /// Deliberately wrong: existing jumps keep their own marks and the inserted
    /// jump reuses `ε_{1+N_t}`. Used as a negative control.
    Unshifted,
}

impl LossScenario {
    pub fn new(path: Arc<IntensityPath>, jump_times: Vec<f64>, marks: Vec<(f64, f64)>) -> Result<Self> {
        if jump_times.len() != marks.len() {
            return Err(Error::Input(format!(
                "{} jump times but {} marks",
                jump_times.len(),
                marks.len()
            )));
        }
        let horizon = path.horizon();
        if jump_times.iter().any(|&t| !(t > 0.0 && t <= horizon)) {
            return Err(Error::Input(format!("jump times must lie in (0, {horizon}]")));
        }
        if jump_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("jump times must be strictly increasing".into()));
        }
        Ok(Self {
            path,
            jump_times,
            marks,
        })
    }

    pub fn path(&self) -> &Arc<IntensityPath> {
        &self.path
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn marks(&self) -> &[(f64, f64)] {
        &self.marks
    }

    /// N_T.
    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    /// N_t: jumps at or before `t`.
    pub fn count_until(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t)
    }

    /// The mark a jump inserted at `t` receives: `ε_{1+N_t}`, or `extra` when
    /// no jump follows `t`.
    pub fn mark_for_insertion(&self, t: f64, extra: (f64, f64)) -> (f64, f64) {
        self.marks.get(self.count_until(t)).copied().unwrap_or(extra)
    }

    /// Writes `tau,cum_lambda_at_tau,eps,theta` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "tau,cum_lambda_at_tau,eps,theta")?;
        for (&t, &(e, th)) in self.jump_times.iter().zip(&self.marks) {
            writeln!(out, "{},{},{},{}", t, self.path.cumulative_unchecked(t), e, th)?;
        }
        Ok(())
    }
}

/// Draws N ~ Poisson(Λ_T) and N conditional-uniform jump times via the time
/// change, appending to the buffers. Marks are drawn afterwards, one per jump.
pub(crate) fn draw_jumps_into(
    path: &IntensityPath,
    pair: &ClaimPairSpec,
    stream: &mut RandomStream,
    times: &mut Vec<f64>,
    marks: &mut Vec<(f64, f64)>,
) {
    times.clear();
    marks.clear();
    let total = path.total();
    if total <= 0.0 {
        return;
    }
    let n = match Poisson::new(total) {
        Ok(p) => p.sample(stream) as usize,
        Err(_) => 0,
    };
    for _ in 0..n {
        times.push(stream.uniform() * total);
    }
    times.sort_by(f64::total_cmp);
    for s in times.iter_mut() {
        *s = path.inverse_unchecked(*s);
    }
    for _ in 0..n {
        marks.push(pair.draw(stream));
    }
}

/// Simulates jump times and marks conditional on `path`.
pub fn simulate_jumps(
    path: &Arc<IntensityPath>,
    pair: &ClaimPairSpec,
    stream: &mut RandomStream,
) -> Result<LossScenario> {
    pair.validate()?;
    let mut times = Vec::new();
    let mut marks = Vec::new();
    draw_jumps_into(path, pair, stream, &mut times, &mut marks);
    Ok(LossScenario {
        path: Arc::clone(path),
        jump_times: times,
        marks,
    })
}

#[inline]
pub(crate) fn discounted_loss(
    path: &IntensityPath,
    times: &[f64],
    marks: &[(f64, f64)],
    model: &ClaimModel,
    kappa: f64,
) -> f64 {
    let horizon = path.horizon();
    times.iter().zip(marks).fold(0.0, |acc, (&t, &(e, _))| {
        acc + model.f(t, path.cumulative_unchecked(t), e) * (-kappa * (horizon - t)).exp()
    })
}

#[inline]
pub(crate) fn discounted_generalized_loss(
    path: &IntensityPath,
    times: &[f64],
    marks: &[(f64, f64)],
    model: &ClaimModel,
    kappa: f64,
) -> f64 {
    let horizon = path.horizon();
    times.iter().zip(marks).fold(0.0, |acc, (&t, &(e, th))| {
        acc + model.g(t, path.cumulative_unchecked(t), e, th) * (-kappa * (horizon - t)).exp()
    })
}

/// `L_T = Σ f(τ_i, Λ_{τ_i}, ε_i) e^{-κ(T - τ_i)}`.
pub fn loss_at_t(scenario: &LossScenario, model: &ClaimModel, kappa: f64) -> f64 {
    discounted_loss(&scenario.path, &scenario.jump_times, &scenario.marks, model, kappa)
}

/// `L̂_T = Σ g(τ_i, Λ_{τ_i}, ε_i, ϑ_i) e^{-κ(T - τ_i)}`.
pub fn generalized_loss_at_t(scenario: &LossScenario, model: &ClaimModel, kappa: f64) -> f64 {
    discounted_generalized_loss(&scenario.path, &scenario.jump_times, &scenario.marks, model, kappa)
}

/// The scenario `ω ∪ {t}`: one extra jump at `t`, marks re-indexed by jump order.
///
/// `mark` extends the mark sequence (it is `ε_{N_T + 1}`); the inserted jump
/// itself receives `ε_{1+N_t}` and every later jump moves to the next mark.
pub fn add_jump(scenario: &LossScenario, t: f64, mark: (f64, f64)) -> Result<LossScenario> {
    add_jump_with(scenario, t, mark, MarkIndexing::ByJumpOrder)
}

pub fn add_jump_with(
    scenario: &LossScenario,
    t: f64,
    mark: (f64, f64),
    indexing: MarkIndexing,
) -> Result<LossScenario> {
    let horizon = scenario.path.horizon();
    if !(t > 0.0 && t <= horizon) {
        return Err(Error::Domain(format!("jump time {t} outside (0, {horizon}]")));
    }
    let pos = scenario.jump_times.partition_point(|&s| s < t);
    if scenario.jump_times.get(pos) == Some(&t) {
        return Err(Error::Collision(t));
    }
    let mut jump_times = Vec::with_capacity(scenario.jump_times.len() + 1);
    jump_times.extend_from_slice(&scenario.jump_times[..pos]);
    jump_times.push(t);
    jump_times.extend_from_slice(&scenario.jump_times[pos..]);

    let mut marks = Vec::with_capacity(scenario.marks.len() + 1);
    match indexing {
        MarkIndexing::ByJumpOrder => {
            marks.extend_from_slice(&scenario.marks);
            marks.push(mark);
        }
        MarkIndexing::Unshifted => {
            marks.extend_from_slice(&scenario.marks[..pos]);
            marks.push(scenario.marks.get(pos).copied().unwrap_or(mark));
            marks.extend_from_slice(&scenario.marks[pos..]);
        }
    }
    Ok(LossScenario {
        path: Arc::clone(&scenario.path),
        jump_times,
        marks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::ClaimPairSpec;
    use crate::intensity::{simulate_path, IntensityModel, TimeGrid};
    use crate::marginal::MarginalSpec;
    use crate::stats::{chi_square_gof, ks_one_sample, Moments};
    use proptest::prelude::*;

    fn constant_path(lambda0: f64) -> Arc<IntensityPath> {
        let grid = TimeGrid::uniform(1.0, 1024).unwrap();
        let mut s = RandomStream::new(0, 0);
        Arc::new(simulate_path(&IntensityModel::Constant { lambda0 }, &grid, &mut s).unwrap())
    }

    fn exp_model() -> ClaimModel {
        ClaimModel::new(
            SeverityMap::Identity,
            PaymentMap::FromSeverity,
            ClaimPairSpec::diagonal(MarginalSpec::Exponential { rate: 1.0 }),
        )
    }

    fn hand_scenario(times: &[f64], eps: &[f64]) -> LossScenario {
        let marks = eps.iter().map(|&e| (e, e + 3.0)).collect();
        LossScenario::new(constant_path(1.0), times.to_vec(), marks).unwrap()
    }

    #[test]
    fn empty_scenario_has_zero_loss() {
        let sc = hand_scenario(&[], &[]);
        assert_eq!(loss_at_t(&sc, &exp_model(), 0.3), 0.0);
        assert_eq!(generalized_loss_at_t(&sc, &exp_model(), 0.3), 0.0);
    }

    #[test]
    fn plain_sum_without_discount() {
        let sc = hand_scenario(&[0.1, 0.4, 0.9], &[1.0, 2.0, 3.0]);
        assert_eq!(loss_at_t(&sc, &exp_model(), 0.0), 6.0);
    }

    #[test]
    fn jump_at_horizon_is_not_discounted() {
        let sc = hand_scenario(&[1.0], &[2.5]);
        assert_eq!(loss_at_t(&sc, &exp_model(), 1.0), 2.5);
    }

    #[test]
    fn generalized_loss_variants() {
        let sc = LossScenario::new(constant_path(1.0), vec![0.2, 0.7], vec![(1.0, 4.0), (2.0, 5.0)]).unwrap();
        let mut model = exp_model();
        model.payment = PaymentMap::IdentityY;
        assert_eq!(generalized_loss_at_t(&sc, &model, 0.0), 9.0);
        model.payment = PaymentMap::Zero;
        assert_eq!(generalized_loss_at_t(&sc, &model, 0.7), 0.0);
    }

    #[test]
    fn from_severity_reduces_to_loss() {
        let path = constant_path(3.0);
        let model = ClaimModel::new(
            SeverityMap::Scaled,
            PaymentMap::FromSeverity,
            ClaimPairSpec::clayton(
                MarginalSpec::Pareto { scale: 1.0, shape: 3.0 },
                MarginalSpec::Exponential { rate: 2.0 },
                2.0,
            ),
        );
        for k in 0..200 {
            let mut s = RandomStream::new(5, k);
            let sc = simulate_jumps(&path, &model.pair, &mut s).unwrap();
            assert_eq!(loss_at_t(&sc, &model, 0.4), generalized_loss_at_t(&sc, &model, 0.4));
        }
    }

    #[test]
    fn poisson_mean_for_unit_intensity() {
        let path = constant_path(1.0);
        let pair = exp_model().pair;
        let m: Moments = (0..100_000)
            .map(|k| {
                let mut s = RandomStream::new(6, k);
                simulate_jumps(&path, &pair, &mut s).unwrap().jump_count() as f64
            })
            .collect();
        assert!((m.mean - 1.0).abs() < 3.0 * m.std_error(), "{m:?}");
    }

    #[test]
    fn counts_follow_poisson_pmf() {
        let path = constant_path(2.0);
        let pair = exp_model().pair;
        let mut counts = vec![0u64; 30];
        for k in 0..50_000 {
            let mut s = RandomStream::new(7, k);
            counts[simulate_jumps(&path, &pair, &mut s).unwrap().jump_count()] += 1;
        }
        let mut probs = Vec::new();
        let mut p = (-2.0f64).exp();
        for j in 0..30 {
            probs.push(p);
            p *= 2.0 / (j + 1) as f64;
        }
        assert!(chi_square_gof(&counts, &probs) > 0.01);
    }

    #[test]
    fn negligible_intensity_gives_no_jumps() {
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let mut s = RandomStream::new(0, 0);
        let model = IntensityModel::Constant { lambda0: 1e-12 };
        let path = Arc::new(simulate_path(&model, &grid, &mut s).unwrap());
        let pair = exp_model().pair;
        let jumps: usize = (0..10_000)
            .map(|_| simulate_jumps(&path, &pair, &mut s).unwrap().jump_count())
            .sum();
        assert_eq!(jumps, 0);
    }

    #[test]
    fn interarrival_gaps_are_exponential() {
        let path = {
            let grid = TimeGrid::uniform(50.0, 4096).unwrap();
            let mut s = RandomStream::new(0, 0);
            Arc::new(simulate_path(&IntensityModel::Constant { lambda0: 3.0 }, &grid, &mut s).unwrap())
        };
        let pair = exp_model().pair;
        let mut gaps = Vec::new();
        for k in 0..100 {
            let mut s = RandomStream::new(8, k);
            let sc = simulate_jumps(&path, &pair, &mut s).unwrap();
            let mut prev = 0.0;
            for &t in sc.jump_times() {
                gaps.push(t - prev);
                prev = t;
            }
        }
        let ks = ks_one_sample(&gaps, |x| 1.0 - (-3.0 * x).exp());
        assert!(ks.passes(0.01), "{ks:?}");
    }

    #[test]
    fn add_jump_to_empty_scenario() {
        let sc = hand_scenario(&[], &[]);
        let model = exp_model();
        let kappa = 0.7;
        let new = add_jump(&sc, 0.5, (1.0, 1.0)).unwrap();
        assert_eq!(new.jump_count(), 1);
        let expected = model.f(0.5, 0.5, 1.0) * (-kappa * 0.5f64).exp();
        assert!((loss_at_t(&new, &model, kappa) - expected).abs() < 1e-15);
    }

    #[test]
    fn add_jump_reindexes_by_jump_order() {
        let sc = hand_scenario(&[0.2, 0.5, 0.8], &[1.0, 2.0, 3.0]);
        let new = add_jump(&sc, 0.6, (9.0, 9.5)).unwrap();
        assert_eq!(new.jump_times(), &[0.2, 0.5, 0.6, 0.8]);
        let eps: Vec<f64> = new.marks().iter().map(|m| m.0).collect();
        assert_eq!(eps, vec![1.0, 2.0, 3.0, 9.0]);
        assert_eq!(sc.mark_for_insertion(0.6, (9.0, 9.5)).0, 3.0);
        assert_eq!(sc.mark_for_insertion(0.9, (9.0, 9.5)).0, 9.0);
        // Input untouched.
        assert_eq!(sc.jump_times(), &[0.2, 0.5, 0.8]);
        assert_eq!(sc.marks().len(), 3);
    }

    #[test]
    fn unshifted_mutation_duplicates_next_mark() {
        let sc = hand_scenario(&[0.2, 0.5, 0.8], &[1.0, 2.0, 3.0]);
        let new = add_jump_with(&sc, 0.6, (9.0, 9.5), MarkIndexing::Unshifted).unwrap();
        let eps: Vec<f64> = new.marks().iter().map(|m| m.0).collect();
        assert_eq!(eps, vec![1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn add_jump_errors() {
        let sc = hand_scenario(&[0.2, 0.5], &[1.0, 2.0]);
        assert_eq!(add_jump(&sc, 0.5, (1.0, 1.0)).unwrap_err(), Error::Collision(0.5));
        assert!(matches!(add_jump(&sc, 0.0, (1.0, 1.0)), Err(Error::Domain(_))));
        assert!(matches!(add_jump(&sc, 1.5, (1.0, 1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn scenario_csv() {
        let sc = hand_scenario(&[0.25], &[1.5]);
        let mut buf = Vec::new();
        sc.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "tau,cum_lambda_at_tau,eps,theta\n0.25,0.25,1.5,4.5\n"
        );
    }

    /// L_T(ω ∪ {t}) = L_t + f(t, Λ_t, ε_{1+N_t}) e^{-κ(T-t)} + (L⁺_T - L⁺_t),
    /// with L⁺ the loss evaluated on marks shifted by one, all built by hand.
    fn decomposition(sc: &LossScenario, model: &ClaimModel, kappa: f64, t: f64, extra: (f64, f64)) -> f64 {
        let path = sc.path();
        let horizon = path.horizon();
        let mut marks = sc.marks().to_vec();
        marks.push(extra);
        let disc = |s: f64| (-kappa * (horizon - s)).exp();
        let n_t = sc.count_until(t);
        let mut total = 0.0;
        for i in 0..n_t {
            let s = sc.jump_times()[i];
            total += model.f(s, path.cumulative_at(s).unwrap(), marks[i].0) * disc(s);
        }
        total += model.f(t, path.cumulative_at(t).unwrap(), marks[n_t].0) * disc(t);
        for i in n_t..sc.jump_count() {
            let s = sc.jump_times()[i];
            total += model.f(s, path.cumulative_at(s).unwrap(), marks[i + 1].0) * disc(s);
        }
        total
    }

    proptest! {
        #[test]
        fn add_jump_matches_decomposition(
            raw in proptest::collection::vec((0.001f64..1.0, 0.1f64..5.0), 0..8),
            t in 0.001f64..1.0,
            extra in 0.1f64..5.0,
            kappa in 0.0f64..2.0,
        ) {
            let mut raw = raw;
            raw.sort_by(|a, b| a.0.total_cmp(&b.0));
            raw.dedup_by(|a, b| a.0 == b.0);
            prop_assume!(raw.iter().all(|p| p.0 != t));
            let times: Vec<f64> = raw.iter().map(|p| p.0).collect();
            let eps: Vec<f64> = raw.iter().map(|p| p.1).collect();
            let sc = hand_scenario(&times, &eps);
            let mut model = exp_model();
            model.severity = SeverityMap::Scaled;
            let new = add_jump(&sc, t, (extra, 0.0)).unwrap();
            prop_assert_eq!(new.jump_count(), sc.jump_count() + 1);
            let direct = loss_at_t(&new, &model, kappa);
            let hand = decomposition(&sc, &model, kappa, t, (extra, 0.0));
            prop_assert!((direct - hand).abs() <= 1e-12 * hand.max(1.0));
        }

        #[test]
        fn loss_monotone_in_marks(
            raw in proptest::collection::vec((0.001f64..1.0, 0.1f64..5.0), 1..8),
            bump in 0.0f64..3.0,
            which in 0usize..8,
        ) {
            let mut raw = raw;
            raw.sort_by(|a, b| a.0.total_cmp(&b.0));
            raw.dedup_by(|a, b| a.0 == b.0);
            let times: Vec<f64> = raw.iter().map(|p| p.0).collect();
            let eps: Vec<f64> = raw.iter().map(|p| p.1).collect();
            let mut bumped = eps.clone();
            let k = which % bumped.len();
            bumped[k] += bump;
            let model = exp_model();
            let a = loss_at_t(&hand_scenario(&times, &eps), &model, 0.5);
            let b = loss_at_t(&hand_scenario(&times, &bumped), &model, 0.5);
            prop_assert!(b >= a);
        }
    }
}
