//! Multi-constraint safe reinforcement learning with objective suppression.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod algos;
pub mod approx;
pub mod critics;
pub mod envs;
pub mod error;
pub mod mdp;
pub mod oracle;
pub mod rollout;
pub mod seed;

pub use error::{Error, Result};
