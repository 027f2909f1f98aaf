//! Joint law of (Λ_t, W_t) for the log-Brownian intensity `λ_t = λ0 exp(2βW_t)`.
//!
//! The density involves a Hartman–Watson type kernel
//!
//! ```text
//! i_y(r) = r e^{π²/(4y)} / (π sqrt(π y)) ∫_0^∞ exp(-r cosh x - x²/(4y)) sinh x sin(πx/(2y)) dx
//! ```
//!
//! whose integral suffers catastrophic cancellation as `y -> 0`. Evaluation
//! reports an absolute error bound and refuses to return a value once the
//! bound exceeds the value itself.

use serde::Serialize;

use crate::error::{ensure_positive, Error, Result};
use crate::quadrature::{adaptive_gk, CompensatedSum};

/// A quadrature value with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityValue {
    pub value: f64,
    pub abs_error: f64,
}

/// Oscillatory part of `i_y(r)` scaled by `e^{r}`:
/// `∫_0^∞ exp(-r (cosh x - 1) - x²/(4y)) sinh x sin(πx/(2y)) dx`,
/// together with its error bound.
fn scaled_kernel_integral(y: f64, r: f64) -> (f64, f64) {
    let envelope_log = |x: f64| {
        let s = (0.5 * x).sinh();
        -2.0 * r * s * s - x * x / (4.0 * y) + x.sinh().ln()
    };
    let integrand = |x: f64| {
        let s = (0.5 * x).sinh();
        (-2.0 * r * s * s - x * x / (4.0 * y)).exp() * x.sinh() * (std::f64::consts::PI * x / (2.0 * y)).sin()
    };

    // Zeros of the sine factor sit at multiples of 2y.
    let width = 2.0 * y;
    let mut total = CompensatedSum::default();
    let mut err = 0.0;
    let mut abs_sum = 0.0;
    let mut peak_log = f64::NEG_INFINITY;
    let cutoff = (1e-16f64).ln();
    const MAX_PANELS: usize = 200_000;
    for k in 0..MAX_PANELS {
        let (a, b) = (k as f64 * width, (k + 1) as f64 * width);
        let panel_peak = envelope_log(b).max(envelope_log(0.5 * (a + b)));
        peak_log = peak_log.max(panel_peak);
        let scale = panel_peak.exp() * width;
        let piece = adaptive_gk(&integrand, a, b, 1e-15 * scale.max(f64::MIN_POSITIVE), 1e-13);
        total.add(piece.value);
        err += piece.abs_error;
        abs_sum += piece.abs_integral;
        // Past the maximum and negligible at the panel end.
        if envelope_log(b) < peak_log + cutoff {
            break;
        }
    }
    let rounding = 32.0 * f64::EPSILON * abs_sum;
    (total.value(), err + rounding)
}

/// `i_y(r)`, returned as a mantissa and a natural-log scale so that the huge
/// `e^{π²/(4y)}` factor and the tiny `e^{-r}` factor never meet in floating point.
fn kernel_log_scaled(y: f64, r: f64) -> (f64, f64, f64) {
    let (integral, err) = scaled_kernel_integral(y, r);
    let pi = std::f64::consts::PI;
    let log_scale = r.ln() + pi * pi / (4.0 * y) - (pi * (pi * y).sqrt()).ln() - r;
    (integral, err, log_scale)
}

/// Hartman–Watson type kernel `i_y(r)` with an absolute error bound.
pub fn hartman_watson_kernel(y: f64, r: f64) -> Result<DensityValue> {
    ensure_positive("y", y)?;
    ensure_positive("r", r)?;
    let (integral, err, log_scale) = kernel_log_scaled(y, r);
    finish(integral, err, log_scale)
}

fn finish(integral: f64, err: f64, log_scale: f64) -> Result<DensityValue> {
    let factor = log_scale.exp();
    let value = integral * factor;
    let abs_error = err * factor;
    if !(err < integral.abs()) || !value.is_finite() || !abs_error.is_finite() {
        return Err(Error::PrecisionLoss {
            value,
            error: abs_error,
        });
    }
    Ok(DensityValue { value, abs_error })
}

/// Density of `(Λ_t, W_t)` at `(v, z)` for `λ_s = λ0 exp(2βW_s)`:
///
/// ```text
/// |β|/(2v) · exp(-λ0 (1 + e^{2βz}) / (2β² v)) · i_{β²t/2}(λ0 e^{βz} / (β² v)),   v > 0.
/// ```
pub fn logbm_joint_density(t: f64, v: f64, z: f64, lambda0: f64, beta: f64) -> Result<DensityValue> {
    ensure_positive("t", t)?;
    ensure_positive("lambda0", lambda0)?;
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::Parameter(format!("beta must be nonzero and finite, got {beta}")));
    }
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("v = {v}: the density is supported on v > 0")));
    }
    if !z.is_finite() {
        return Err(Error::Domain(format!("z = {z} must be finite")));
    }
    let b2 = beta * beta;
    let y = 0.5 * b2 * t;
    let r = lambda0 * (beta * z).exp() / (b2 * v);
    let log_prefactor = (beta.abs() / (2.0 * v)).ln() - lambda0 * (1.0 + (2.0 * beta * z).exp()) / (2.0 * b2 * v);
    if !r.is_finite() || r <= 0.0 || log_prefactor < -745.0 - std::f64::consts::PI.powi(2) / (4.0 * y) {
        // Below the smallest subnormal whatever the kernel does.
        return Ok(DensityValue {
            value: 0.0,
            abs_error: 0.0,
        });
    }
    let (integral, err, log_scale) = kernel_log_scaled(y, r);
    finish(integral, err, log_scale + log_prefactor)
}
