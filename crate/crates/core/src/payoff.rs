//! Payoff maps `h: ℝ₊ → ℝ₊` applied to the terminal loss.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// An interval with independently open or closed endpoints. Infinite bounds are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    #[serde(default = "yes")]
    pub lower_closed: bool,
    #[serde(default = "yes")]
    pub upper_closed: bool,
}

fn yes() -> bool {
    true
}

impl Interval {
    pub fn closed(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            lower_closed: true,
            upper_closed: true,
        }
    }

    /// `[lower, upper)`.
    pub fn half_open(lower: f64, upper: f64) -> Self {
        Self {
            upper_closed: false,
            ..Self::closed(lower, upper)
        }
    }

    /// `(lower, ∞)`.
    pub fn above(lower: f64) -> Self {
        Self {
            lower,
            upper: f64::INFINITY,
            lower_closed: false,
            upper_closed: true,
        }
    }

    /// `[lower, ∞)`.
    pub fn at_least(lower: f64) -> Self {
        Self::closed(lower, f64::INFINITY)
    }

    pub fn everything() -> Self {
        Self::closed(f64::NEG_INFINITY, f64::INFINITY)
    }

    #[inline]
    pub fn contains(&self, z: f64) -> bool {
        let above = if self.lower_closed {
            z >= self.lower
        } else {
            z > self.lower
        };
        let below = if self.upper_closed {
            z <= self.upper
        } else {
            z < self.upper
        };
        above && below
    }

    /// The interval `{z : z + x ∈ self}`.
    pub fn shifted_back(&self, x: f64) -> Self {
        Self {
            lower: self.lower - x,
            upper: self.upper - x,
            ..*self
        }
    }
}

pub type PayoffFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Payoff {
    Indicator(Interval),
    Constant(f64),
    /// `(z - strike)⁺`.
    Call {
        strike: f64,
    },
    /// `(strike - z)⁺`.
    Put {
        strike: f64,
    },
    Square,
    Sqrt,
    /// `a·z + b`.
    Affine {
        a: f64,
        b: f64,
    },
    Custom(PayoffFn),
}

impl Payoff {
    pub fn indicator(lower: f64, upper: f64) -> Self {
        Payoff::Indicator(Interval::closed(lower, upper))
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Payoff::Indicator(i) => {
                if i.contains(z) {
                    1.0
                } else {
                    0.0
                }
            }
            Payoff::Constant(c) => *c,
            Payoff::Call { strike } => (z - strike).max(0.0),
            Payoff::Put { strike } => (strike - z).max(0.0),
            Payoff::Square => z * z,
            Payoff::Sqrt => z.sqrt(),
            Payoff::Affine { a, b } => a * z + b,
            Payoff::Custom(h) => h(z),
        }
    }
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Indicator(i) => f.debug_tuple("Indicator").field(i).finish(),
            Payoff::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Payoff::Call { strike } => f.debug_struct("Call").field("strike", strike).finish(),
            Payoff::Put { strike } => f.debug_struct("Put").field("strike", strike).finish(),
            Payoff::Square => write!(f, "Square"),
            Payoff::Sqrt => write!(f, "Sqrt"),
            Payoff::Affine { a, b } => f.debug_struct("Affine").field("a", a).field("b", b).finish(),
            Payoff::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_endpoints() {
        let c = Interval::closed(1.0, 2.0);
        assert!(c.contains(1.0) && c.contains(2.0) && !c.contains(2.0000001));
        let h = Interval::half_open(1.0, 2.0);
        assert!(h.contains(1.0) && !h.contains(2.0));
        let a = Interval::above(1.0);
        assert!(!a.contains(1.0) && a.contains(1e300));
        assert!(Interval::everything().contains(-1e300));
    }

    #[test]
    fn payoff_values() {
        assert_eq!(Payoff::Call { strike: 1.0 }.eval(0.5), 0.0);
        assert_eq!(Payoff::Call { strike: 1.0 }.eval(3.0), 2.0);
        assert_eq!(Payoff::Put { strike: 1.0 }.eval(0.25), 0.75);
        assert_eq!(Payoff::Square.eval(3.0), 9.0);
        assert_eq!(Payoff::Sqrt.eval(4.0), 2.0);
        assert_eq!(Payoff::Affine { a: 2.0, b: 1.0 }.eval(3.0), 7.0);
        assert_eq!(Payoff::indicator(1.0, 2.0).eval(1.5), 1.0);
        assert_eq!(Payoff::Custom(Arc::new(|z| z + 1.0)).eval(1.0), 2.0);
    }

    #[test]
    fn interval_deserializes_closed_by_default() {
        let i: Interval = serde_json::from_str(r#"{"lower":1.0,"upper":2.0}"#).unwrap();
        assert_eq!(i, Interval::closed(1.0, 2.0));
    }
}
