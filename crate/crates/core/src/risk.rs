//! Value at risk and expected shortfall of the terminal loss.
//!
//! The shortfall threshold is `β = q⁺_{L_T}(α)` and
//! `ES_α(-L_T) = -E[L_T·1{L_T < β}] / P[L_T < β]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    /// `inf{x : F(x) > α}`.
    pub q_plus: f64,
    /// `inf{x : F(x) ≥ α}`.
    pub q_minus: f64,
    /// `-q_plus`.
    pub var: f64,
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("level {alpha} outside (0, 1)")))
    }
}

/// Empirical upper and lower α-quantiles of an ascending sample.
pub fn var_quantiles(sorted: &[f64], alpha: f64) -> Result<Quantiles> {
    check_level(alpha)?;
    if sorted.is_empty() {
        return Err(Error::Domain("empty sample".into()));
    }
    let n = sorted.len();
    let nf = n as f64;
    // Empirical CDF at sorted[i] is at least (i + 1) / n, so q⁺ is the first
    // index with (i + 1)/n > α and q⁻ the first with (i + 1)/n ≥ α.
    let first = |pred: &dyn Fn(f64) -> bool| {
        let mut i = ((alpha * nf).floor() as usize).min(n - 1);
        while i > 0 && pred(i as f64 / nf) {
            i -= 1;
        }
        while i + 1 < n && !pred((i + 1) as f64 / nf) {
            i += 1;
        }
        i
    };
    let q_plus = sorted[first(&|p| p > alpha)];
    let q_minus = sorted[first(&|p| p >= alpha)];
    Ok(Quantiles {
        q_plus,
        q_minus,
        var: -q_plus,
    })
}

/// Which side of the threshold belongs to the conditioning event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// `L_T < β`.
    #[default]
    Strict,
    /// `L_T ≤ β`.
    Inclusive,
}

impl Threshold {
    #[inline]
    fn below(self, l: f64, beta: f64) -> bool {
        match self {
            Threshold::Strict => l < beta,
            Threshold::Inclusive => l <= beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShortfallResult {
    pub beta: f64,
    pub p_below: f64,
    /// `E[L_T·1{L_T < β}]`.
    pub truncated_mean: f64,
    pub es: f64,
    pub std_error: f64,
}

/// Expected shortfall from an ascending loss sample. The standard error is the
/// delta-method error of the ratio with `β` held fixed.
pub fn expected_shortfall(sorted: &[f64], alpha: f64, threshold: Threshold) -> Result<ShortfallResult> {
    let beta = var_quantiles(sorted, alpha)?.q_plus;
    let n = sorted.len() as f64;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for &l in sorted {
        if threshold.below(l, beta) {
            hits += 1;
            sum += l;
        }
    }
    if hits == 0 {
        return Err(Error::DegenerateConditioning(format!(
            "no sample below the threshold {beta}"
        )));
    }
    let p_below = hits as f64 / n;
    let truncated_mean = sum / n;
    let ratio = truncated_mean / p_below;
    let residual: Moments = sorted
        .iter()
        .map(|&l| if threshold.below(l, beta) { l - ratio } else { 0.0 })
        .collect();
    let std_error = residual.variance().sqrt() / n.sqrt() / p_below;
    Ok(ShortfallResult {
        beta,
        p_below,
        truncated_mean,
        es: -ratio,
        std_error,
    })
}

/// Expected shortfall of `L_T = unit·N`, `N ~ Poisson(mean)`, by summing atoms.
pub fn expected_shortfall_poisson(mean: f64, unit: f64, alpha: f64, threshold: Threshold) -> Result<ShortfallResult> {
    check_level(alpha)?;
    crate::error::ensure_positive("mean", mean)?;
    crate::error::ensure_positive("unit", unit)?;
    let pmf = poisson_pmf_until(mean, 1.0 - 1e-17);
    let mut cdf = 0.0;
    let mut k_plus = pmf.len() - 1;
    for (k, &p) in pmf.iter().enumerate() {
        cdf += p;
        if cdf > alpha {
            k_plus = k;
            break;
        }
    }
    let beta = k_plus as f64 * unit;
    let mut p_below = 0.0;
    let mut truncated_mean = 0.0;
    for (k, &p) in pmf.iter().enumerate() {
        let l = k as f64 * unit;
        if !threshold.below(l, beta) {
            break;
        }
        p_below += p;
        truncated_mean += l * p;
    }
    if p_below == 0.0 {
        return Err(Error::DegenerateConditioning(format!("P[L < {beta}] is zero")));
    }
    Ok(ShortfallResult {
        beta,
        p_below,
        truncated_mean,
        es: -truncated_mean / p_below,
        std_error: 0.0,
    })
}

/// Poisson probabilities from 0 until their sum reaches `mass` (or the mean is
/// passed by far enough that the terms vanish).
pub(crate) fn poisson_pmf_until(mean: f64, mass: f64) -> Vec<f64> {
    // Start from the log-pmf to survive means where e^{-mean} underflows.
    let mut out = Vec::new();
    let mut total = 0.0;
    let mut k = 0usize;
    loop {
        let log_p = -mean + k as f64 * mean.ln() - statrs::function::gamma::ln_gamma(k as f64 + 1.0);
        let p = log_p.exp();
        out.push(p);
        total += p;
        if total >= mass || (k as f64 > mean && p < 1e-300) {
            break;
        }
        k += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Poisson};

    #[test]
    fn hand_countable_quantiles() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        let q = var_quantiles(&s, 0.5).unwrap();
        assert_eq!((q.q_plus, q.q_minus, q.var), (6.0, 5.0, -6.0));
        let q = var_quantiles(&s, 0.55).unwrap();
        assert_eq!((q.q_plus, q.q_minus), (6.0, 6.0));
    }

    #[test]
    fn point_mass_quantiles() {
        let s = vec![3.0; 17];
        for alpha in [0.01, 0.5, 0.99] {
            let q = var_quantiles(&s, alpha).unwrap();
            assert_eq!((q.q_plus, q.q_minus), (3.0, 3.0));
        }
    }

    #[test]
    fn quantile_domain() {
        assert!(matches!(var_quantiles(&[1.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(var_quantiles(&[1.0], 1.0), Err(Error::Domain(_))));
        assert!(matches!(var_quantiles(&[], 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn poisson_quantile_at_ninety_percent() {
        let r = expected_shortfall_poisson(2.0, 1.0, 0.9, Threshold::Strict).unwrap();
        assert_eq!(r.beta, 4.0);
        let e = (-2.0f64).exp();
        assert!((r.p_below - e * (1.0 + 2.0 + 2.0 + 4.0 / 3.0)).abs() < 1e-15);
        assert!((r.truncated_mean - e * (2.0 + 4.0 + 4.0)).abs() < 1e-15);
    }

    #[test]
    fn point_mass_shortfall_is_pinned() {
        let s = vec![2.0; 10];
        assert!(matches!(
            expected_shortfall(&s, 0.5, Threshold::Strict),
            Err(Error::DegenerateConditioning(_))
        ));
        let r = expected_shortfall(&s, 0.5, Threshold::Inclusive).unwrap();
        assert_eq!(r.es, -2.0);
        assert_eq!(r.p_below, 1.0);
    }

    #[test]
    fn symmetric_sample_lower_half() {
        let s: Vec<f64> = (0..100).map(|i| i as f64 - 49.5).collect();
        let r = expected_shortfall(&s, 0.5, Threshold::Strict).unwrap();
        let lower: Vec<f64> = s.iter().copied().filter(|&v| v < r.beta).collect();
        let direct = lower.iter().sum::<f64>() / lower.len() as f64;
        assert_eq!(r.beta, 0.5);
        assert!((r.es + direct).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_matches_poisson_atoms() {
        let exact = expected_shortfall_poisson(2.0, 1.0, 0.9, Threshold::Strict).unwrap();
        let dist = Poisson::new(2.0).unwrap();
        let mut s = RandomStream::new(11, 0);
        let mut draws: Vec<f64> = (0..1_000_000).map(|_| dist.sample(&mut s)).collect();
        draws.sort_by(f64::total_cmp);
        let mc = expected_shortfall(&draws, 0.9, Threshold::Strict).unwrap();
        assert_eq!(mc.beta, exact.beta);
        assert!((mc.es - exact.es).abs() < 3.0 * mc.std_error, "{mc:?} vs {exact:?}");
    }

    #[test]
    fn continuous_high_level_tends_to_mean() {
        let mut s = RandomStream::new(12, 0);
        let mut draws: Vec<f64> = (0..100_000).map(|_| -s.uniform().ln()).collect();
        draws.sort_by(f64::total_cmp);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let r = expected_shortfall(&draws, 1.0 - 1e-6, Threshold::Strict).unwrap();
        assert!((r.es + mean).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn quantile_ordering(mut values in proptest::collection::vec(0.0f64..100.0, 1..80), alpha in 0.001f64..0.999) {
            values.sort_by(f64::total_cmp);
            let q = var_quantiles(&values, alpha).unwrap();
            prop_assert!(q.q_minus <= q.q_plus);
            let n = values.len() as f64;
            let at = |x: f64| values.iter().filter(|&&v| v <= x).count() as f64 / n;
            prop_assert!(at(q.q_plus) > alpha);
            prop_assert!(at(q.q_minus) >= alpha);
            // Nothing smaller qualifies.
            prop_assert!(values.iter().filter(|&&v| v < q.q_plus).all(|&v| at(v) <= alpha));
            prop_assert!(values.iter().filter(|&&v| v < q.q_minus).all(|&v| at(v) < alpha));
        }

        #[test]
        fn shortfall_stays_below_threshold(mut values in proptest::collection::vec(0.0f64..100.0, 2..80), alpha in 0.05f64..0.95) {
            values.sort_by(f64::total_cmp);
            if let Ok(r) = expected_shortfall(&values, alpha, Threshold::Strict) {
                prop_assert!(-r.es < r.beta);
            }
        }
    }
}
