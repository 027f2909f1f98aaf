//! The building block `φ_λ^h(x) = E[h(L_T + x) | λ]`, estimated from
//! conditional replicates of `L_T` on one fixed intensity path.
//!
//! A block is simulated once and then answers every `(t, x)` query by
//! shifting `h` over the sorted sample.

use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::intensity::IntensityPath;
use crate::loss::{discounted_loss, draw_jumps_into, ClaimModel};
use crate::payoff::{Interval, Payoff};
use crate::rng::RandomStream;

#[derive(Debug, Clone)]
pub struct EmpiricalBlock {
    samples: Vec<f64>,
    // prefix[i] = Σ samples[..i], prefix_sq likewise for squares.
    prefix: Vec<f64>,
    prefix_sq: Vec<f64>,
    path: Arc<IntensityPath>,
}

/// Simulates `n_inner` losses conditional on `path` and sorts them.
pub fn build_block(
    path: &Arc<IntensityPath>,
    model: &ClaimModel,
    kappa: f64,
    n_inner: usize,
    stream: &mut RandomStream,
) -> Result<EmpiricalBlock> {
    if n_inner == 0 {
        return Err(Error::Argument("n_inner must be at least 1".into()));
    }
    model.pair.validate()?;
    let mut times = Vec::new();
    let mut marks = Vec::new();
    let mut samples = Vec::with_capacity(n_inner);
    for _ in 0..n_inner {
        draw_jumps_into(path, &model.pair, stream, &mut times, &mut marks);
        samples.push(discounted_loss(path, &times, &marks, model, kappa));
    }
    EmpiricalBlock::from_samples(samples, Arc::clone(path))
}

impl EmpiricalBlock {
    pub fn from_samples(mut samples: Vec<f64>, path: Arc<IntensityPath>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("a block needs at least one sample".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numeric {
                t: path.horizon(),
                path: 0,
                detail: format!("non-finite loss sample {bad}"),
            });
        }
        samples.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(samples.len() + 1);
        let mut prefix_sq = Vec::with_capacity(samples.len() + 1);
        let (mut s1, mut s2) = (0.0, 0.0);
        prefix.push(0.0);
        prefix_sq.push(0.0);
        for &s in &samples {
            s1 += s;
            s2 += s * s;
            prefix.push(s1);
            prefix_sq.push(s2);
        }
        Ok(Self {
            samples,
            prefix,
            prefix_sq,
            path,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn n_inner(&self) -> usize {
        self.samples.len()
    }

    pub fn path(&self) -> &Arc<IntensityPath> {
        &self.path
    }

    pub fn mean(&self) -> f64 {
        self.prefix[self.samples.len()] / self.samples.len() as f64
    }

    /// Empirical `P[L_T ≤ z | λ]`.
    pub fn cdf(&self, z: f64) -> f64 {
        self.samples.partition_point(|&s| s <= z) as f64 / self.samples.len() as f64
    }

    /// Index range of the samples inside `interval`.
    fn range(&self, interval: &Interval) -> (usize, usize) {
        let lo = if interval.lower_closed {
            self.samples.partition_point(|&s| s < interval.lower)
        } else {
            self.samples.partition_point(|&s| s <= interval.lower)
        };
        let hi = if interval.upper_closed {
            self.samples.partition_point(|&s| s <= interval.upper)
        } else {
            self.samples.partition_point(|&s| s < interval.upper)
        };
        (lo, hi.max(lo))
    }

    /// Empirical `P[L_T + x ∈ interval | λ]`.
    pub fn interval_probability(&self, interval: &Interval, x: f64) -> f64 {
        let (lo, hi) = self.range(&interval.shifted_back(x));
        (hi - lo) as f64 / self.samples.len() as f64
    }

    /// Empirical `P[L_T ∈ [K - x, M - x] | λ]`.
    pub fn phi_interval(&self, lower: f64, upper: f64, x: f64) -> Result<f64> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(Error::Argument(format!(
                "interval [{lower}, {upper}] is empty or malformed"
            )));
        }
        check_shift(x)?;
        Ok(self.interval_probability(&Interval::closed(lower, upper), x))
    }

    /// Mean of `h(sample + x)` over the block, evaluated term by term.
    pub fn phi_general(&self, h: &Payoff, x: f64) -> Result<f64> {
        check_shift(x)?;
        let mut total = 0.0;
        for &s in &self.samples {
            let z = s + x;
            let v = h.eval(z);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Payoff { at: z, value: v });
            }
            total += v;
        }
        Ok(total / self.samples.len() as f64)
    }

    /// `φ^h(x)` using sorted-sample shortcuts where `h` allows them, falling
    /// back to [`phi_general`](Self::phi_general).
    pub fn phi(&self, h: &Payoff, x: f64) -> Result<f64> {
        check_shift(x)?;
        let n = self.samples.len() as f64;
        let total = self.samples.len();
        match h {
            Payoff::Indicator(i) => Ok(self.interval_probability(i, x)),
            Payoff::Constant(c) => {
                if *c >= 0.0 && c.is_finite() {
                    Ok(*c)
                } else {
                    Err(Error::Payoff { at: x, value: *c })
                }
            }
            Payoff::Square => {
                let m1 = self.prefix[total] / n;
                let m2 = self.prefix_sq[total] / n;
                Ok(m2 + 2.0 * x * m1 + x * x)
            }
            Payoff::Affine { a, b } => {
                let v = a * (self.mean() + x) + b;
                // Affine maps can go negative; only the scan can tell where.
                if *a >= 0.0 && v >= 0.0 && a * (self.samples[0] + x) + b >= 0.0 {
                    Ok(v)
                } else {
                    self.phi_general(h, x)
                }
            }
            Payoff::Call { strike } => {
                let k = strike - x;
                let i = self.samples.partition_point(|&s| s <= k);
                let count = (total - i) as f64;
                Ok(((self.prefix[total] - self.prefix[i]) - count * k) / n)
            }
            Payoff::Put { strike } => {
                let k = strike - x;
                let i = self.samples.partition_point(|&s| s < k);
                Ok((i as f64 * k - self.prefix[i]) / n)
            }
            Payoff::Sqrt | Payoff::Custom(_) => self.phi_general(h, x),
        }
    }

    /// Writes the empirical CDF as `x,cdf` rows, one per distinct sample value.
    pub fn write_cdf_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_cdf_csv(&self.samples, out)
    }
}

fn check_shift(x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("shift {x} must be finite and nonnegative")))
    }
}

/// Writes `x,cdf` rows for a sorted sample, merging ties.
pub fn write_cdf_csv<W: Write>(sorted: &[f64], mut out: W) -> io::Result<()> {
    writeln!(out, "x,cdf")?;
    let n = sorted.len();
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let mut j = i + 1;
        while j < n && sorted[j] == v {
            j += 1;
        }
        writeln!(out, "{},{}", v, j as f64 / n as f64)?;
        i = j;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::ClaimPairSpec;
    use crate::intensity::{simulate_path, IntensityModel, TimeGrid};
    use crate::loss::{loss_at_t, simulate_jumps, PaymentMap, SeverityMap};
    use crate::marginal::MarginalSpec;
    use crate::stats::chi_square_gof;
    use proptest::prelude::*;

    fn constant_path(lambda0: f64) -> Arc<IntensityPath> {
        let grid = TimeGrid::uniform(1.0, 256).unwrap();
        let mut s = RandomStream::new(0, 0);
        Arc::new(simulate_path(&IntensityModel::Constant { lambda0 }, &grid, &mut s).unwrap())
    }

    fn model(eps: MarginalSpec) -> ClaimModel {
        ClaimModel::new(
            SeverityMap::Identity,
            PaymentMap::FromSeverity,
            ClaimPairSpec::diagonal(eps),
        )
    }

    fn hand_block(values: &[f64]) -> EmpiricalBlock {
        EmpiricalBlock::from_samples(values.to_vec(), constant_path(1.0)).unwrap()
    }

    #[test]
    fn tiny_intensity_gives_step_at_zero() {
        let path = constant_path(1e-12);
        let mut s = RandomStream::new(1, 0);
        let b = build_block(&path, &model(MarginalSpec::Exponential { rate: 1.0 }), 0.0, 100, &mut s).unwrap();
        assert!(b.samples().iter().all(|&v| v == 0.0));
        assert_eq!(b.cdf(0.0), 1.0);
        assert_eq!(b.cdf(-1e-300), 0.0);
        let mut buf = Vec::new();
        b.write_cdf_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,cdf\n0,1\n");
    }

    #[test]
    fn zero_inner_is_rejected() {
        let mut s = RandomStream::new(1, 0);
        let err = build_block(
            &constant_path(1.0),
            &model(MarginalSpec::Constant { value: 1.0 }),
            0.0,
            0,
            &mut s,
        );
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn block_reproduces_direct_simulation() {
        let path = constant_path(2.0);
        let m = model(MarginalSpec::Pareto { scale: 1.0, shape: 3.0 });
        let mut a = RandomStream::new(2, 5);
        let block = build_block(&path, &m, 0.3, 50, &mut a).unwrap();
        let mut b = RandomStream::new(2, 5);
        let mut direct: Vec<f64> = (0..50)
            .map(|_| loss_at_t(&simulate_jumps(&path, &m.pair, &mut b).unwrap(), &m, 0.3))
            .collect();
        direct.sort_by(f64::total_cmp);
        assert_eq!(block.samples(), &direct[..]);
    }

    #[test]
    fn unit_claims_give_poisson_counts() {
        let path = constant_path(1.0);
        let mut s = RandomStream::new(3, 0);
        let b = build_block(
            &path,
            &model(MarginalSpec::Constant { value: 1.0 }),
            0.0,
            20_000,
            &mut s,
        )
        .unwrap();
        let mut counts = vec![0u64; 20];
        for &v in b.samples() {
            assert_eq!(v.fract(), 0.0);
            counts[v as usize] += 1;
        }
        let mut probs = Vec::new();
        let mut p = (-1.0f64).exp();
        for j in 0..20 {
            probs.push(p);
            p /= (j + 1) as f64;
        }
        assert!(chi_square_gof(&counts, &probs) > 0.01);
        assert!(b.samples().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn phi_interval_counts_closed_interval() {
        let b = hand_block(&[0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]);
        assert_eq!(b.phi_interval(f64::NEG_INFINITY, f64::INFINITY, 0.0).unwrap(), 1.0);
        assert_eq!(b.phi_interval(1.0, 2.0, 0.0).unwrap(), 0.4);
        // x = 0.5 queries [0.5, 1.5]
        assert_eq!(b.phi_interval(1.0, 2.0, 0.5).unwrap(), 0.4);
        assert_eq!(b.phi_interval(1.0, 1.0, 0.0).unwrap(), 0.2);
        assert_eq!(b.phi_interval(10.0, 20.0, 0.0).unwrap(), 0.0);
        for x in [0.0, 0.25, 0.5, 1.0, 3.0] {
            let direct = b.samples().iter().filter(|&&s| s >= 1.0 - x && s <= 2.0 - x).count() as f64 / 10.0;
            assert_eq!(b.phi_interval(1.0, 2.0, x).unwrap(), direct);
        }
    }

    #[test]
    fn phi_interval_errors() {
        let b = hand_block(&[1.0]);
        assert!(matches!(b.phi_interval(2.0, 1.0, 0.0), Err(Error::Argument(_))));
        assert!(matches!(b.phi_interval(1.0, 2.0, -0.1), Err(Error::Argument(_))));
    }

    #[test]
    fn null_interval_on_continuous_law() {
        let path = constant_path(1.0);
        let mut s = RandomStream::new(4, 0);
        let b = build_block(
            &path,
            &model(MarginalSpec::Exponential { rate: 1.0 }),
            0.0,
            10_000,
            &mut s,
        )
        .unwrap();
        assert_eq!(b.phi_interval(1.3, 1.3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn phi_general_basics() {
        let b = hand_block(&[0.5, 1.0, 2.0, 4.5]);
        assert_eq!(b.phi_general(&Payoff::Constant(1.0), 3.0).unwrap(), 1.0);
        assert_eq!(b.phi_general(&Payoff::Affine { a: 1.0, b: 0.0 }, 0.0).unwrap(), 2.0);
        let neg = Payoff::Affine { a: 1.0, b: -3.0 };
        assert!(matches!(b.phi_general(&neg, 0.0), Err(Error::Payoff { .. })));
        assert!(matches!(b.phi(&neg, 0.0), Err(Error::Payoff { .. })));
        let inf = Payoff::Custom(Arc::new(|_| f64::INFINITY));
        assert!(matches!(b.phi_general(&inf, 0.0), Err(Error::Payoff { .. })));
    }

    #[test]
    fn shortcuts_match_scan() {
        let path = constant_path(3.0);
        let mut s = RandomStream::new(5, 0);
        let b = build_block(
            &path,
            &model(MarginalSpec::Pareto { scale: 1.0, shape: 3.0 }),
            0.2,
            2_000,
            &mut s,
        )
        .unwrap();
        let payoffs = [
            Payoff::indicator(1.0, 2.0),
            Payoff::Indicator(Interval::above(2.0)),
            Payoff::Indicator(Interval::half_open(0.5, 3.0)),
            Payoff::Constant(2.5),
            Payoff::Square,
            Payoff::Affine { a: 2.0, b: 1.0 },
            Payoff::Call { strike: 3.0 },
            Payoff::Put { strike: 3.0 },
        ];
        for h in &payoffs {
            for x in [0.0, 0.3, 1.0, 2.7, 10.0] {
                let fast = b.phi(h, x).unwrap();
                let slow = b.phi_general(h, x).unwrap();
                assert!(
                    (fast - slow).abs() <= 1e-12 * slow.abs().max(1.0),
                    "{h:?} at {x}: {fast} vs {slow}"
                );
            }
        }
        for x in [0.0, 0.3, 1.0] {
            assert!(
                (b.phi(&Payoff::indicator(1.0, 2.0), x).unwrap() - b.phi_interval(1.0, 2.0, x).unwrap()).abs() < 1e-15
            );
        }
    }

    #[test]
    fn cdf_csv_merges_ties() {
        let b = hand_block(&[2.0, 1.0, 1.0, 3.0]);
        let mut buf = Vec::new();
        b.write_cdf_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,cdf\n1,0.5\n2,0.75\n3,1\n");
    }

    fn arb_block() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(prop_oneof![0.0f64..10.0, (0u32..10).prop_map(|k| k as f64)], 1..60)
    }

    proptest! {
        #[test]
        fn phi_interval_monotone(values in arb_block(), k in 0.0f64..10.0, m in 0.0f64..10.0, d in 0.0f64..3.0, x in 0.0f64..5.0) {
            let b = hand_block(&values);
            let (k, m) = if k <= m { (k, m) } else { (m, k) };
            let base = b.phi_interval(k, m, x).unwrap();
            prop_assert!(b.phi_interval(k - d, m, x).unwrap() >= base);
            prop_assert!(b.phi_interval(k, m + d, x).unwrap() >= base);
        }

        #[test]
        fn phi_interval_shift_consistency(values in arb_block(), k in 0.0f64..10.0, w in 0.0f64..5.0, x in 0.0f64..5.0) {
            let b = hand_block(&values);
            prop_assert_eq!(b.phi_interval(k, k + w, x).unwrap(), b.phi_interval(k - x, k + w - x, 0.0).unwrap());
        }

        #[test]
        fn convex_payoff_dominates_jensen(values in arb_block(), x in 0.0f64..5.0, strike in 0.0f64..8.0) {
            let b = hand_block(&values);
            let mean = b.mean();
            for h in [Payoff::Square, Payoff::Call { strike }] {
                let phi = b.phi_general(&h, x).unwrap();
                prop_assert!(phi >= h.eval(mean + x) - 1e-12 * phi.abs().max(1.0));
            }
        }
    }
}
