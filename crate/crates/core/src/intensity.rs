//! Intensity models, sampled intensity paths and the cumulated intensity Λ.

use std::io::{self, Write};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_positive, Error, Result};
use crate::rng::RandomStream;

/// Strictly increasing simulation times `0 = t_0 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Grid("need at least two grid points".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::Grid(format!("grid must start at 0, starts at {}", times[0])));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Grid(format!(
                "grid not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { times })
    }

    /// `points` equispaced points on `[0, horizon]`, endpoints included.
    pub fn uniform(horizon: f64, points: usize) -> Result<Self> {
        ensure_positive("horizon", horizon)?;
        if points < 2 {
            return Err(Error::Grid("need at least two grid points".into()));
        }
        let h = horizon / (points - 1) as f64;
        let mut times: Vec<f64> = (0..points).map(|i| i as f64 * h).collect();
        times[points - 1] = horizon;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }
}

/// Law of the claim-arrival intensity λ.
#[derive(Debug, Clone, PartialEq)]
pub enum IntensityModel {
    Constant {
        lambda0: f64,
    },
    /// Piecewise-linear λ through `(time, value)` knots, held flat outside them.
    Deterministic {
        table: Vec<(f64, f64)>,
    },
    /// `λ_t = λ0 · exp(2 β W_t)` for a standard Brownian motion W.
    LogBrownian {
        lambda0: f64,
        beta: f64,
    },
}

impl IntensityModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            IntensityModel::Constant { lambda0 } => ensure_positive("lambda0", *lambda0),
            IntensityModel::Deterministic { table } => {
                if table.is_empty() {
                    return Err(Error::Parameter("deterministic intensity table is empty".into()));
                }
                if table.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::Parameter("intensity table times must increase".into()));
                }
                if table.iter().any(|&(t, v)| !t.is_finite() || !v.is_finite() || v < 0.0) {
                    return Err(Error::Parameter(
                        "intensity table values must be finite and >= 0".into(),
                    ));
                }
                Ok(())
            }
            IntensityModel::LogBrownian { lambda0, beta } => {
                ensure_positive("lambda0", *lambda0)?;
                if *beta == 0.0 || !beta.is_finite() {
                    return Err(Error::Parameter(format!("beta must be nonzero and finite, got {beta}")));
                }
                Ok(())
            }
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            IntensityModel::Constant { lambda0 } => Some(*lambda0),
            _ => None,
        }
    }

    fn table_value(table: &[(f64, f64)], t: f64) -> f64 {
        let j = table.partition_point(|p| p.0 <= t);
        if j == 0 {
            return table[0].1;
        }
        if j == table.len() {
            return table[j - 1].1;
        }
        let (t0, v0) = table[j - 1];
        let (t1, v1) = table[j];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// One sampled intensity trajectory with its trapezoid running integral.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPath {
    grid: Vec<f64>,
    lambda: Vec<f64>,
    cum: Vec<f64>,
    brownian: Option<Vec<f64>>,
}

impl IntensityPath {
    /// Builds a path from λ values on `grid`, integrating with the trapezoid rule.
    pub fn from_values(grid: &TimeGrid, lambda: Vec<f64>) -> Result<Self> {
        let times = grid.times();
        if lambda.len() != times.len() {
            return Err(Error::Input(format!(
                "{} intensity values for {} grid points",
                lambda.len(),
                times.len()
            )));
        }
        if lambda.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input("intensity values must be finite and nonnegative".into()));
        }
        let mut cum = Vec::with_capacity(times.len());
        cum.push(0.0);
        for i in 1..times.len() {
            let step = 0.5 * (lambda[i - 1] + lambda[i]) * (times[i] - times[i - 1]);
            cum.push(cum[i - 1] + step);
        }
        Ok(Self {
            grid: times.to_vec(),
            lambda,
            cum,
            brownian: None,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn lambda_values(&self) -> &[f64] {
        &self.lambda
    }

    pub fn cum_values(&self) -> &[f64] {
        &self.cum
    }

    pub fn brownian_values(&self) -> Option<&[f64]> {
        self.brownian.as_deref()
    }

    pub fn horizon(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    /// Λ_T.
    pub fn total(&self) -> f64 {
        self.cum[self.cum.len() - 1]
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.horizon() {
            Ok(())
        } else {
            Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon())))
        }
    }

    fn cell(&self, t: f64) -> usize {
        let j = self.grid.partition_point(|&g| g <= t);
        j.clamp(1, self.grid.len() - 1) - 1
    }

    /// Λ_t by linear interpolation between grid knots.
    pub fn cumulative_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.cumulative_unchecked(t))
    }

    pub(crate) fn cumulative_unchecked(&self, t: f64) -> f64 {
        let i = self.cell(t);
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        let frac = (t - t0) / (t1 - t0);
        self.cum[i] + frac * (self.cum[i + 1] - self.cum[i])
    }

    /// λ_t by linear interpolation between grid knots.
    pub fn intensity_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.intensity_unchecked(t))
    }

    pub(crate) fn intensity_unchecked(&self, t: f64) -> f64 {
        let i = self.cell(t);
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        let frac = (t - t0) / (t1 - t0);
        self.lambda[i] + frac * (self.lambda[i + 1] - self.lambda[i])
    }

    /// Smallest t with Λ_t >= s.
    pub fn inverse_cumulative(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0 && s <= self.total()) {
            return Err(Error::Domain(format!("s = {s} outside [0, Λ_T = {}]", self.total())));
        }
        Ok(self.inverse_unchecked(s))
    }

    pub(crate) fn inverse_unchecked(&self, s: f64) -> f64 {
        let j = self.cum.partition_point(|&c| c < s);
        if j == 0 {
            return self.grid[0];
        }
        if j >= self.cum.len() {
            return self.horizon();
        }
        if self.cum[j] == s {
            return self.grid[j];
        }
        let (c0, c1) = (self.cum[j - 1], self.cum[j]);
        let (t0, t1) = (self.grid[j - 1], self.grid[j]);
        (t0 + (s - c0) / (c1 - c0) * (t1 - t0)).min(t1)
    }

    /// Writes `t,lambda,cum_lambda` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,lambda,cum_lambda")?;
        for i in 0..self.grid.len() {
            writeln!(out, "{},{},{}", self.grid[i], self.lambda[i], self.cum[i])?;
        }
        Ok(())
    }
}

/// Samples one path of `model` on `grid`.
///
/// Constant and deterministic models are filled analytically; the log-Brownian
/// model uses exact Gaussian increments for W.
pub fn simulate_path(model: &IntensityModel, grid: &TimeGrid, stream: &mut RandomStream) -> Result<IntensityPath> {
    model.validate()?;
    let times = grid.times();
    match model {
        IntensityModel::Constant { lambda0 } => Ok(IntensityPath {
            grid: times.to_vec(),
            lambda: vec![*lambda0; times.len()],
            cum: times.iter().map(|t| lambda0 * t).collect(),
            brownian: None,
        }),
        IntensityModel::Deterministic { table } => {
            let values = times.iter().map(|&t| IntensityModel::table_value(table, t)).collect();
            IntensityPath::from_values(grid, values)
        }
        IntensityModel::LogBrownian { lambda0, beta } => {
            let mut w = Vec::with_capacity(times.len());
            w.push(0.0);
            for i in 1..times.len() {
                let z: f64 = StandardNormal.sample(stream);
                w.push(w[i - 1] + (times[i] - times[i - 1]).sqrt() * z);
            }
            let values = w.iter().map(|wi| lambda0 * (2.0 * beta * wi).exp()).collect();
            let mut path = IntensityPath::from_values(grid, values)?;
            path.brownian = Some(w);
            Ok(path)
        }
    }
}
