//! Multi-constraint environments.
//!
//! Constraint index 0 is always the collision-like risk and index 1 the
//! bounds/collapse-like risk.

pub mod discrete;
pub mod grid;
pub mod nav;
pub mod tabular;

pub use discrete::{heading_table, DiscreteActions};
pub use grid::{Cell, GridAction, HazardGrid, HazardGridConfig};
pub use nav::{DiscObstacle, NavState, PointNav2D, PointNav2DConfig};
pub use tabular::TabularEnv;

use crate::error::Result;

/// Outcome of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep<O> {
    pub obs: O,
    pub reward: f64,
    pub flags: Vec<u8>,
    /// Entered a terminal state.
    pub done: bool,
    /// Hit the step limit without terminating.
    pub truncated: bool,
}

/// Episodic environment with per-step constraint flags.
pub trait Environment {
    type Obs: Clone;
    type Action: Clone;

    fn constraint_count(&self) -> usize;

    /// Starts a new episode; all randomness of the episode derives from `seed`.
    fn reset(&mut self, seed: u64) -> Self::Obs;

    fn step(&mut self, action: &Self::Action) -> Result<EnvStep<Self::Obs>>;
}
