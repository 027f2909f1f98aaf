//! Quadrature rules: Gauss–Legendre, Gauss–Laguerre, adaptive Gauss–Kronrod,
//! and compensated summation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        out[i] = (-z, w);
        out[n - 1 - i] = (z, w);
    }
    out
}

/// Gauss–Laguerre nodes and weights for `∫_0^∞ e^{-x} f(x) dx`.
pub fn gauss_laguerre(n: usize) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(n);
    let nf = n as f64;
    let mut z: f64 = 0.0;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                let prev2 = out[i - 2].0;
                z + ((1.0 + 2.55 * ai) / (1.9 * ai)) * (z - prev2)
            }
        };
        let mut p2 = 0.0;
        let mut pp = 0.0;
        for _ in 0..200 {
            let (mut p1, mut q2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = q2;
                q2 = p1;
                p1 = ((2 * j + 1) as f64 - z) * q2 / (j + 1) as f64 - j as f64 * p3 / (j + 1) as f64;
            }
            p2 = q2;
            pp = (nf * p1 - nf * p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        out.push((z, -1.0 / (pp * nf * p2)));
    }
    out
}

/// Integration rule over the contract horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeQuadrature {
    GaussLegendre {
        nodes: usize,
    },
    /// Composite trapezoid on `nodes` equispaced points including both ends.
    Trapezoid {
        nodes: usize,
    },
}

impl Default for TimeQuadrature {
    fn default() -> Self {
        TimeQuadrature::GaussLegendre { nodes: 64 }
    }
}

impl TimeQuadrature {
    pub fn node_count(&self) -> usize {
        match *self {
            TimeQuadrature::GaussLegendre { nodes } | TimeQuadrature::Trapezoid { nodes } => nodes,
        }
    }

    /// `(t, weight)` pairs on `[0, horizon]`.
    pub fn nodes(&self, horizon: f64) -> Result<Vec<(f64, f64)>> {
        match *self {
            TimeQuadrature::GaussLegendre { nodes } => {
                if nodes == 0 {
                    return Err(Error::Parameter("quadrature needs at least one node".into()));
                }
                let half = 0.5 * horizon;
                Ok(gauss_legendre(nodes)
                    .into_iter()
                    .map(|(x, w)| (half * (x + 1.0), half * w))
                    .collect())
            }
            TimeQuadrature::Trapezoid { nodes } => {
                if nodes < 2 {
                    return Err(Error::Parameter("trapezoid rule needs at least two nodes".into()));
                }
                let h = horizon / (nodes - 1) as f64;
                Ok((0..nodes)
                    .map(|i| {
                        let w = if i == 0 || i == nodes - 1 { 0.5 * h } else { h };
                        let t = if i == nodes - 1 { horizon } else { i as f64 * h };
                        (t, w)
                    })
                    .collect())
            }
        }
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One G7/K15 panel: (integral, error estimate, integral of |f|).
pub fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * KRONROD_WEIGHTS[7];
    let mut gauss = fc * GAUSS7_WEIGHTS[3];
    let mut abs = fc.abs() * KRONROD_WEIGHTS[7];
    for k in 0..7 {
        let x = h * KRONROD_NODES[k];
        let (f1, f2) = (f(c - x), f(c + x));
        kronrod += KRONROD_WEIGHTS[k] * (f1 + f2);
        abs += KRONROD_WEIGHTS[k] * (f1.abs() + f2.abs());
        if k % 2 == 1 {
            gauss += GAUSS7_WEIGHTS[k / 2] * (f1 + f2);
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs(), abs * h.abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    /// ∫|f|, the scale against which rounding error is judged.
    pub abs_integral: f64,
}

/// Adaptive Gauss–Kronrod by recursive bisection.
pub fn adaptive_gk<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Integral {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        whole: (f64, f64, f64),
        tol: f64,
        depth: u32,
    ) -> (f64, f64, f64) {
        // Below a few ulps of ∫|f| the error estimate is rounding noise.
        if whole.1 <= tol || whole.1 <= 50.0 * f64::EPSILON * whole.2 || depth >= 30 {
            return whole;
        }
        let m = 0.5 * (a + b);
        let left = gauss_kronrod_15(f, a, m);
        let right = gauss_kronrod_15(f, m, b);
        let l = recurse(f, a, m, left, 0.5 * tol, depth + 1);
        let r = recurse(f, m, b, right, 0.5 * tol, depth + 1);
        (l.0 + r.0, l.1 + r.1, l.2 + r.2)
    }
    let first = gauss_kronrod_15(f, a, b);
    let tol = abs_tol.max(rel_tol * first.0.abs());
    let (value, abs_error, abs_integral) = recurse(f, a, b, first, tol, 0);
    Integral {
        value,
        abs_error,
        abs_integral,
    }
}
