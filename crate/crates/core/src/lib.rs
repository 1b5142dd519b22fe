//! Tabular MDPs, Markov-chain diagnostics and on-policy Q-learning with
//! finite-time error bounds.

// `!(x > 0.0)` is the NaN-rejecting range check used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod chain;
pub mod error;
pub mod mdp;
pub mod qlearn;
pub mod random;

pub use error::{Error, Result};
pub use mdp::{ExplorationParams, Policy, QFunction, TabularMdp};
