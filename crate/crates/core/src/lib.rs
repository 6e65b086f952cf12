//! Projected stochastic semi-gradient TD learning, Q-learning and minimax
//! Q-learning with multi-layer neural function approximation on finite
//! MDPs and zero-sum Markov games, plus exact tabular oracles and the
//! spectral diagnostics used to check the convergence theory numerically.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod features;
pub mod network;
pub mod oracles;
pub mod rng;

pub use error::{Error, Result};
