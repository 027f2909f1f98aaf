//! Compound Poisson distributions on a lattice via the Panjer recursion.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::marginal::MarginalSpec;

const NORMALIZATION_TOL: f64 = 1e-12;
const MAX_SEVERITY_POINTS: usize = 50_000_000;
const MAX_RECURSION_WORK: f64 = 2e10;

/// How a continuous severity is moved onto the lattice `{0, h, 2h, …}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Mass of `((j-1)h, jh]` to `jh`: stochastically larger than the original.
    RoundUp,
    /// Mass of `[jh, (j+1)h)` to `jh`: stochastically smaller.
    RoundDown,
    /// Mass of `[(j-½)h, (j+½)h)` to `jh`.
    #[default]
    Midpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedSeverity {
    step: f64,
    pmf: Vec<f64>,
}

impl DiscretizedSeverity {
    pub fn new(step: f64, pmf: Vec<f64>) -> Result<Self> {
        ensure_positive("step", step)?;
        if pmf.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Input(
                "severity pmf entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Input(format!("severity pmf sums to {total}, not 1")));
        }
        Ok(Self { step, pmf })
    }

    /// All mass at `k·step`.
    pub fn point_mass(step: f64, k: usize) -> Result<Self> {
        let mut pmf = vec![0.0; k + 1];
        pmf[k] = 1.0;
        Self::new(step, pmf)
    }

    /// Discretizes `spec`, truncating once the remaining tail is below `tail_tol`;
    /// the leftover tail mass is placed on the last lattice point.
    pub fn from_marginal(spec: &MarginalSpec, step: f64, method: Discretization, tail_tol: f64) -> Result<Self> {
        spec.validate()?;
        ensure_positive("step", step)?;
        ensure_positive("tail_tol", tail_tol)?;
        if let MarginalSpec::Constant { value } = *spec {
            let r = value / step;
            let k = match method {
                Discretization::RoundUp => r.ceil(),
                Discretization::RoundDown => r.floor(),
                Discretization::Midpoint => (r + 0.5).floor(),
            };
            return Self::point_mass(step, k.max(0.0) as usize);
        }
        // Mass of lattice point j is F(right(j)) - F(right(j-1)).
        let offset = match method {
            Discretization::RoundUp => 0.0,
            Discretization::RoundDown => 1.0,
            Discretization::Midpoint => 0.5,
        };
        let right = |j: usize| (j as f64 + offset) * step;
        let mut pmf = Vec::new();
        let mut prev = 0.0;
        let mut j = 0;
        loop {
            let cur = spec.cdf(right(j));
            pmf.push((cur - prev).max(0.0));
            prev = cur;
            if 1.0 - cur < tail_tol {
                break;
            }
            j += 1;
            if j >= MAX_SEVERITY_POINTS {
                return Err(Error::Truncation {
                    achieved: cur,
                    target: 1.0 - tail_tol,
                });
            }
        }
        let total: f64 = pmf.iter().sum();
        *pmf.last_mut().expect("non-empty") += 1.0 - total;
        Self::new(step, pmf)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(j, p)| j as f64 * self.step * p).sum()
    }
}

/// Compound distribution of `S = X_1 + … + X_N` on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundTable {
    step: f64,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

// Tolerance for deciding that a real number sits on a lattice point.
const LATTICE_SLACK: f64 = 1e-9;

impl CompoundTable {
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn total_mass(&self) -> f64 {
        *self.cdf.last().expect("non-empty")
    }

    fn at_index(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.cdf[(k as usize).min(self.cdf.len() - 1)]
        }
    }

    /// `P[S ≤ z]`.
    pub fn cdf(&self, z: f64) -> f64 {
        if z == f64::INFINITY {
            return self.total_mass();
        }
        self.at_index((z / self.step + LATTICE_SLACK).floor() as i64)
    }

    /// `P[S < z]`.
    pub fn cdf_below(&self, z: f64) -> f64 {
        if z == f64::INFINITY {
            return self.total_mass();
        }
        self.at_index((z / self.step - LATTICE_SLACK).ceil() as i64 - 1)
    }

    /// `P[lower ≤ S ≤ upper]`.
    pub fn probability_closed(&self, lower: f64, upper: f64) -> f64 {
        (self.cdf(upper) - self.cdf_below(lower)).max(0.0)
    }
}

/// Poisson-count Panjer recursion up to lattice index `horizon`.
///
/// Fails with [`Error::Truncation`] when the table holds less than `1 - 1e-10`
/// of the mass.
pub fn panjer_compound_cdf(mean_count: f64, severity: &DiscretizedSeverity, horizon: usize) -> Result<CompoundTable> {
    ensure_positive("mean_count", mean_count)?;
    let p = severity.pmf();
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Input(format!("severity pmf sums to {total}, not 1")));
    }
    let g0 = (-mean_count * (1.0 - p[0])).exp();
    if g0 == 0.0 {
        return Err(Error::Parameter(format!(
            "mean_count {mean_count} underflows the recursion start"
        )));
    }
    let work = horizon as f64 * p.len().min(horizon + 1) as f64;
    if work > MAX_RECURSION_WORK {
        return Err(Error::Parameter(format!(
            "recursion over {horizon} steps with {} severity points is too large; use a coarser step",
            p.len()
        )));
    }
    let mut g = Vec::with_capacity(horizon + 1);
    g.push(g0);
    // j·p_j precomputed; the recursion is a convolution against it.
    let jp: Vec<f64> = p.iter().enumerate().map(|(j, &pj)| j as f64 * pj).collect();
    for n in 1..=horizon {
        let top = n.min(p.len() - 1);
        let mut acc = 0.0;
        for j in 1..=top {
            acc += jp[j] * g[n - j];
        }
        g.push(mean_count / n as f64 * acc);
    }
    let mut cdf = Vec::with_capacity(g.len());
    let mut run = 0.0;
    for &v in &g {
        run += v;
        cdf.push(run);
    }
    let achieved = run;
    let target = 1.0 - 1e-10;
    if achieved < target {
        return Err(Error::Truncation { achieved, target });
    }
    Ok(CompoundTable {
        step: severity.step(),
        pmf: g,
        cdf,
    })
}

/// Smallest lattice horizon, in steps, holding all but `1e-10` of a compound
/// Poisson mass, found by doubling.
pub fn panjer_auto(mean_count: f64, severity: &DiscretizedSeverity) -> Result<CompoundTable> {
    let mut horizon = severity.pmf().len().max(64);
    loop {
        match panjer_compound_cdf(mean_count, severity, horizon) {
            Err(Error::Truncation { .. }) => horizon *= 2,
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use crate::stats::Moments;
    use rand_distr::{Distribution, Poisson};

    #[test]
    fn unit_point_mass_gives_poisson() {
        let sev = DiscretizedSeverity::point_mass(1.0, 1).unwrap();
        let table = panjer_compound_cdf(2.0, &sev, 60).unwrap();
        let mut p = (-2.0f64).exp();
        for k in 0..30 {
            assert!((table.pmf()[k] - p).abs() <= 1e-15 * p.max(1e-300) + 1e-300, "k={k}");
            p *= 2.0 / (k + 1) as f64;
        }
        assert!((table.total_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lattice_queries() {
        let sev = DiscretizedSeverity::point_mass(0.5, 2).unwrap();
        let table = panjer_compound_cdf(2.0, &sev, 80).unwrap();
        let e = (-2.0f64).exp();
        assert!((table.cdf(1.0) - 3.0 * e).abs() < 1e-15);
        assert!((table.cdf(1.99) - 3.0 * e).abs() < 1e-15);
        assert!((table.cdf_below(1.0) - e).abs() < 1e-15);
        assert!((table.probability_closed(1.0, 2.0) - 4.0 * e).abs() < 1e-15);
        assert_eq!(table.cdf(-0.1), 0.0);
        assert_eq!(table.cdf(f64::INFINITY), table.total_mass());
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(matches!(
            DiscretizedSeverity::new(0.1, vec![0.5, 0.4]),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            DiscretizedSeverity::new(0.1, vec![1.5, -0.5]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn short_horizon_reports_mass() {
        let sev = DiscretizedSeverity::point_mass(1.0, 1).unwrap();
        match panjer_compound_cdf(2.0, &sev, 3) {
            Err(Error::Truncation { achieved, .. }) => {
                let e = (-2.0f64).exp();
                assert!((achieved - e * (1.0 + 2.0 + 2.0 + 4.0 / 3.0)).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exponential_discretizations() {
        let spec = MarginalSpec::Exponential { rate: 1.0 };
        for method in [
            Discretization::RoundUp,
            Discretization::RoundDown,
            Discretization::Midpoint,
        ] {
            let sev = DiscretizedSeverity::from_marginal(&spec, 0.01, method, 1e-15).unwrap();
            let total: f64 = sev.pmf().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let expected = match method {
                Discretization::RoundUp => 0.01 / (1.0 - (-0.01f64).exp()),
                Discretization::RoundDown => 0.01 / (1.0 - (-0.01f64).exp()) - 0.01,
                Discretization::Midpoint => 0.01 * (-0.005f64).exp() / (1.0 - (-0.01f64).exp()),
            };
            assert!(
                (sev.mean() - expected).abs() < 1e-9,
                "{method:?} {} {expected}",
                sev.mean()
            );
        }
        let c = DiscretizedSeverity::from_marginal(
            &MarginalSpec::Constant { value: 1.0 },
            0.01,
            Discretization::Midpoint,
            1e-15,
        )
        .unwrap();
        assert_eq!(c.pmf().len(), 101);
    }

    #[test]
    fn oversized_lattice_is_refused() {
        let sev = DiscretizedSeverity::from_marginal(
            &MarginalSpec::Pareto { scale: 1.0, shape: 3.0 },
            0.01,
            Discretization::Midpoint,
            1e-15,
        )
        .unwrap();
        assert!(matches!(panjer_auto(2.0, &sev), Err(Error::Parameter(_))));
    }

    #[test]
    fn mass_reaches_one() {
        let sev = DiscretizedSeverity::from_marginal(
            &MarginalSpec::Exponential { rate: 1.0 },
            0.01,
            Discretization::Midpoint,
            1e-15,
        )
        .unwrap();
        let table = panjer_auto(1.0, &sev).unwrap();
        assert!((table.total_mass() - 1.0).abs() < 1e-10);
        assert!(table.cdf_values().windows(2).all(|w| w[0] <= w[1]));
    }

    // Compound Poisson(1) of Exp(1) at 1.0: P[S ≤ 1] by a million direct draws.
    #[test]
    fn exponential_compound_matches_simulation() {
        let spec = MarginalSpec::Exponential { rate: 1.0 };
        let table = |m| panjer_auto(1.0, &DiscretizedSeverity::from_marginal(&spec, 0.01, m, 1e-15).unwrap()).unwrap();
        let mid = table(Discretization::Midpoint).cdf(1.0);
        let bound = (table(Discretization::RoundDown).cdf(1.0) - table(Discretization::RoundUp).cdf(1.0)).abs();
        let mut s = RandomStream::new(9, 0);
        let poisson = Poisson::new(1.0).unwrap();
        let m: Moments = (0..1_000_000)
            .map(|_| {
                let n = poisson.sample(&mut s) as usize;
                let total: f64 = (0..n).map(|_| -s.uniform().ln()).sum();
                if total <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        assert!(
            (m.mean - mid).abs() < 3.0 * m.std_error() + bound,
            "{} vs {mid} (bound {bound})",
            m.mean
        );
    }
}
