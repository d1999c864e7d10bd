//! Exact laboratory for score-based discrete diffusion.
//!
//! Dense enumeration over small state spaces V^d gives exact forward
//! marginals, scores, sampler output laws and information quantities, so
//! convergence rates and identities can be checked without Monte Carlo noise.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod forward;
pub mod experiments;
pub mod info_metrics;
pub mod ode;
pub mod quadrature;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod score;
pub mod state_space;
pub mod targets;

pub use error::{Error, Result};
