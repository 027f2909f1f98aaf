//! Simulation and pricing of stop-loss type contracts written on a loss
//! process driven by a doubly stochastic (Cox) Poisson process.
//!
//! The central quantity is `E[L̂_T h(L_T)]`, evaluated through an
//! integration-by-parts representation that only needs the law of `L_T`
//! conditional on the intensity path (the *building block*
//! `φ(x) = E[h(L_T + x) | λ]`). Independent brute-force and recursion
//! estimators live in [`oracle`] and [`panjer`].

pub mod block;
pub mod copula;
pub mod error;
pub mod intensity;
pub mod joint_density;
pub mod loss;
pub mod marginal;
pub mod oracle;
pub mod panjer;
pub mod payoff;
pub mod pricing;
pub mod quadrature;
pub mod risk;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
