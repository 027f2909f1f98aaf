//! Sample statistics and goodness-of-fit tests used by the validation battery.

use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
        }
    }

    /// `|self - other|` in units of the combined standard error.
    /// Returns 0 for an exact tie and +inf for a discrepancy with zero error.
    pub fn z_distance(&self, other: &Estimate, extra_tolerance: f64) -> f64 {
        let gap = ((self.mean - other.mean).abs() - extra_tolerance).max(0.0);
        let se = self.std_error.hypot(other.std_error);
        if gap == 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            gap / se
        }
    }
}

/// Streaming mean and variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance; 0 for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean,
            std_error: self.std_error(),
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Outcome of a Kolmogorov–Smirnov type test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value > significance
    }
}

/// Kolmogorov survival function `Q(λ) = P[K > λ]`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Dual (Jacobi theta) series converges fast for small arguments.
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let base = -pi2 / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for j in 1..=20 {
            let k = (2 * j - 1) as f64;
            sum += (base * k * k).exp();
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            sum += sign * term;
            if term < 1e-18 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Stephens' small-sample correction of the asymptotic distribution.
fn ks_p_value(statistic: f64, effective_n: f64) -> f64 {
    let sq = effective_n.sqrt();
    kolmogorov_survival((sq + 0.12 + 0.11 / sq) * statistic)
}

/// One-sample KS test against a continuous distribution function.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

/// Two-sample KS test. Ties are handled by stepping over equal values together.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
    }
}

/// Pearson correlation; 0 when either coordinate is degenerate.
pub fn pearson(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

struct Fenwick {
    tree: Vec<u32>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, pos: usize) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted positions `< end`.
    fn prefix(&self, end: usize) -> u32 {
        let mut i = end;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Quadrant fractions of `sample` around each origin, in origin order.
/// Quadrants: (x > ox, y > oy), (x <= ox, y > oy), (x <= ox, y <= oy), (x > ox, y <= oy).
fn quadrant_fractions(origins: &[(f64, f64)], sample: &[(f64, f64)]) -> Vec<[f64; 4]> {
    let n = sample.len();
    let nf = n as f64;
    let mut by_x: Vec<(f64, f64)> = sample.to_vec();
    by_x.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut ys: Vec<f64> = sample.iter().map(|p| p.1).collect();
    ys.sort_by(f64::total_cmp);
    let y_rank = |y: f64| ys.partition_point(|&v| v < y);
    let y_upper = |y: f64| ys.partition_point(|&v| v <= y);

    let mut order: Vec<usize> = (0..origins.len()).collect();
    order.sort_by(|&i, &j| origins[i].0.total_cmp(&origins[j].0));

    let mut tree = Fenwick::new(n);
    let mut inserted = 0usize;
    let mut out = vec![[0.0; 4]; origins.len()];
    for idx in order {
        let (ox, oy) = origins[idx];
        while inserted < n && by_x[inserted].0 <= ox {
            tree.add(y_rank(by_x[inserted].1));
            inserted += 1;
        }
        let below_y = y_upper(oy);
        let lower_left = tree.prefix(below_y) as usize;
        let left = inserted;
        let upper_left = left - lower_left;
        let lower_right = below_y - lower_left;
        let upper_right = n + lower_left - left - below_y;
        out[idx] = [
            upper_right as f64 / nf,
            upper_left as f64 / nf,
            lower_left as f64 / nf,
            lower_right as f64 / nf,
        ];
    }
    out
}

fn max_quadrant_gap(origins: &[(f64, f64)], a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let fa = quadrant_fractions(origins, a);
    let fb = quadrant_fractions(origins, b);
    fa.iter()
        .zip(&fb)
        .flat_map(|(qa, qb)| (0..4).map(move |k| (qa[k] - qb[k]).abs()))
        .fold(0.0, f64::max)
}

/// Two-dimensional two-sample KS test (Fasano–Franceschini), with the
/// correlation-adjusted significance approximation of Press et al.
pub fn ks_two_sample_2d(a: &[(f64, f64)], b: &[(f64, f64)]) -> KsResult {
    let d1 = max_quadrant_gap(a, a, b);
    let d2 = max_quadrant_gap(b, a, b);
    let d = 0.5 * (d1 + d2);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sqen = (na * nb / (na + nb)).sqrt();
    let (r1, r2) = (pearson(a), pearson(b));
    let rr = (1.0 - 0.5 * (r1 * r1 + r2 * r2)).sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_survival(d * sqen / (1.0 + rr * (0.25 - 0.75 / sqen))),
    }
}

/// Pearson chi-square goodness of fit on counts, pooling the upper tail so that
/// every cell expects at least five observations. Returns the p-value.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut obs_acc, mut exp_acc) = (0.0, 0.0);
    for (k, &p) in probs.iter().enumerate() {
        obs_acc += observed.get(k).copied().unwrap_or(0) as f64;
        exp_acc += p * nf;
        if exp_acc >= 5.0 {
            cells.push((obs_acc, exp_acc));
            obs_acc = 0.0;
            exp_acc = 0.0;
        }
    }
    // Remaining tail: everything not covered by the listed probabilities.
    let listed_obs: u64 = observed.iter().take(probs.len()).sum();
    obs_acc += (n - listed_obs) as f64;
    exp_acc += (1.0 - probs.iter().sum::<f64>()).max(0.0) * nf;
    if let Some(last) = cells.last_mut() {
        last.0 += obs_acc;
        last.1 += exp_acc;
    } else {
        cells.push((obs_acc, exp_acc));
    }
    if cells.len() < 2 {
        return 1.0;
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (cells.len() - 1) as f64;
    statrs::function::gamma::gamma_ur(df / 2.0, stat / 2.0)
}

/// Kendall's tau-a for continuous pairs, by inversion counting in O(n log n).
pub fn kendall_tau(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len();
    if n < 2 {
        return 0.0;
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let mut ys: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let discordant = count_inversions(&mut ys, &mut buf) as f64;
    let total = (n as f64) * (n as f64 - 1.0) / 2.0;
    (total - 2.0 * discordant) / total
}

fn count_inversions(xs: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (l, r) = xs.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        count_inversions(l, bl) + count_inversions(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if xs[i] <= xs[j] {
            buf[k] = xs[i];
            i += 1;
        } else {
            buf[k] = xs[j];
            inv += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&xs[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&xs[j..n]);
    xs.copy_from_slice(&buf[..n]);
    inv
}
