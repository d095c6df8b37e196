use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvStep, Environment};
use crate::error::{Error, Result};
use crate::mdp::{CmdpSpec, ConstraintSpec};
use crate::seed::{rng_from_seed, Rng as SeededRng};

/// Grid coordinate `[x, y]`.
pub type Cell = [usize; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [Self::Up, Self::Down, Self::Left, Self::Right];

    pub fn from_index(a: usize) -> Result<Self> {
        Self::ALL
            .get(a)
            .copied()
            .ok_or_else(|| Error::EnvInput(format!("grid action {a} outside 0..4")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardGridConfig {
    pub width: usize,
    pub height: usize,
    /// Episodes start uniformly at one of these cells.
    pub start_cells: Vec<Cell>,
    pub goal_cell: Cell,
    /// Non-terminal risk (constraint 0).
    pub hazard_cells: Vec<Cell>,
    /// Terminal risk (constraint 1).
    pub pit_cells: Vec<Cell>,
    pub slip_prob: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
}

impl HazardGridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::EnvInput(m));
        if self.width == 0 || self.height == 0 || self.max_steps == 0 {
            return bad("width, height and max_steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return bad(format!("slip_prob {} outside [0, 1)", self.slip_prob));
        }
        if !self.step_reward.is_finite() || !self.goal_reward.is_finite() {
            return bad("rewards must be finite".into());
        }
        if self.start_cells.is_empty() {
            return bad("start_cells must not be empty".into());
        }
        let cells = self
            .start_cells
            .iter()
            .chain(&self.hazard_cells)
            .chain(&self.pit_cells)
            .chain(std::iter::once(&self.goal_cell));
        for c in cells {
            if c[0] >= self.width || c[1] >= self.height {
                return bad(format!("cell {c:?} outside {}x{} grid", self.width, self.height));
            }
        }
        if self.hazard_cells.contains(&self.goal_cell) || self.pit_cells.contains(&self.goal_cell) {
            return bad("goal cell overlaps a hazard or pit".into());
        }
        Ok(())
    }
}

/// Result of one grid transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOutcome {
    pub next: Cell,
    /// The action actually executed (differs from the command after a slip).
    pub executed: GridAction,
    pub reward: f64,
    pub flags: [u8; 2],
    pub done: bool,
}

/// Finite gridworld with a non-terminal hazard channel and a terminal pit channel.
#[derive(Debug, Clone)]
pub struct HazardGrid {
    cfg: HazardGridConfig,
    hazards: BTreeSet<Cell>,
    pits: BTreeSet<Cell>,
    rng: SeededRng,
    cell: Cell,
    steps: usize,
}

impl HazardGrid {
    pub fn new(cfg: HazardGridConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            hazards: cfg.hazard_cells.iter().copied().collect(),
            pits: cfg.pit_cells.iter().copied().collect(),
            cell: cfg.start_cells[0],
            cfg,
            rng: rng_from_seed(0),
            steps: 0,
        })
    }

    pub fn config(&self) -> &HazardGridConfig {
        &self.cfg
    }

    /// Row-major cell index.
    pub fn index(&self, c: Cell) -> usize {
        c[1] * self.cfg.width + c[0]
    }

    pub fn cell(&self, index: usize) -> Cell {
        [index % self.cfg.width, index / self.cfg.width]
    }

    /// Cells plus one absorbing sink that follows terminal cells.
    pub fn state_count(&self) -> usize {
        self.cfg.width * self.cfg.height + 1
    }

    pub fn sink(&self) -> usize {
        self.cfg.width * self.cfg.height
    }

    pub fn is_terminal(&self, c: Cell) -> bool {
        c == self.cfg.goal_cell || self.pits.contains(&c)
    }

    fn in_bounds(&self, c: Cell) -> bool {
        c[0] < self.cfg.width && c[1] < self.cfg.height
    }

    /// Deterministic move; bumping into the border leaves the agent in place.
    pub fn moved(&self, c: Cell, a: GridAction) -> Cell {
        let [x, y] = c;
        match a {
            GridAction::Up if y + 1 < self.cfg.height => [x, y + 1],
            GridAction::Down if y > 0 => [x, y - 1],
            GridAction::Left if x > 0 => [x - 1, y],
            GridAction::Right if x + 1 < self.cfg.width => [x + 1, y],
            _ => c,
        }
    }

    fn payoff(&self, next: Cell) -> (f64, [u8; 2], bool) {
        let flags = [
            u8::from(self.hazards.contains(&next)),
            u8::from(self.pits.contains(&next)),
        ];
        let reward = if next == self.cfg.goal_cell {
            self.cfg.goal_reward
        } else {
            self.cfg.step_reward
        };
        (reward, flags, self.is_terminal(next))
    }

    /// One transition from an arbitrary cell, drawing the slip from `rng`.
    pub fn transition<R: Rng + ?Sized>(&self, c: Cell, action: usize, rng: &mut R) -> Result<GridOutcome> {
        if !self.in_bounds(c) {
            return Err(Error::EnvInput(format!("state {c:?} outside the grid")));
        }
        let mut executed = GridAction::from_index(action)?;
        if self.cfg.slip_prob > 0.0 && rng.random::<f64>() < self.cfg.slip_prob {
            executed = GridAction::ALL[rng.random_range(0..4)];
        }
        let next = self.moved(c, executed);
        let (reward, flags, done) = self.payoff(next);
        Ok(GridOutcome {
            next,
            executed,
            reward,
            flags,
            done,
        })
    }

    /// All cells with their row-major index.
    pub fn enumerate_states(&self) -> Vec<(Cell, usize)> {
        enumerate_states(&self.cfg)
    }

    /// Exact finite model of the grid, with the sink appended as the last state.
    pub fn to_cmdp(&self, gamma: f64, constraint_gammas: [f64; 2], weights: [f64; 2], epsilon: f64) -> CmdpSpec {
        let ns = self.state_count();
        let na = 4;
        let sink = self.sink();
        let mut transition = vec![0.0; ns * na * ns];
        let mut reward = vec![0.0; ns * na * ns];
        let at = |s: usize, a: usize, n: usize| (s * na + a) * ns + n;
        for s in 0..ns {
            for a in 0..na {
                if s == sink || self.is_terminal(self.cell(s)) {
                    transition[at(s, a, sink)] = 1.0;
                    continue;
                }
                let c = self.cell(s);
                let slip = self.cfg.slip_prob;
                let mut add = |act: GridAction, p: f64| {
                    let next = self.moved(c, act);
                    let n = self.index(next);
                    transition[at(s, a, n)] += p;
                    reward[at(s, a, n)] = self.payoff(next).0;
                };
                add(GridAction::ALL[a], 1.0 - slip);
                if slip > 0.0 {
                    for act in GridAction::ALL {
                        add(act, slip / 4.0);
                    }
                }
            }
        }
        let mut hazard = vec![0u8; ns];
        let mut pit = vec![0u8; ns];
        for &c in &self.hazards {
            hazard[self.index(c)] = 1;
        }
        for &c in &self.pits {
            pit[self.index(c)] = 1;
        }
        let mut initial_dist = vec![0.0; ns];
        let share = 1.0 / self.cfg.start_cells.len() as f64;
        for &c in &self.cfg.start_cells {
            initial_dist[self.index(c)] += share;
        }
        CmdpSpec {
            state_count: ns,
            action_count: na,
            transition,
            reward,
            gamma,
            constraints: vec![
                ConstraintSpec::new("hazard", hazard, constraint_gammas[0], weights[0]),
                ConstraintSpec::new("pit", pit, constraint_gammas[1], weights[1]),
            ],
            epsilon,
            initial_dist,
        }
    }
}

/// Row-major enumeration: `(x, y) ↦ y * width + x`.
pub fn enumerate_states(cfg: &HazardGridConfig) -> Vec<(Cell, usize)> {
    (0..cfg.height)
        .flat_map(|y| (0..cfg.width).map(move |x| [x, y]))
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect()
}

impl Environment for HazardGrid {
    type Obs = usize;
    type Action = usize;

    fn constraint_count(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> usize {
        self.rng = rng_from_seed(seed);
        let k = self.rng.random_range(0..self.cfg.start_cells.len());
        self.cell = self.cfg.start_cells[k];
        self.steps = 0;
        self.index(self.cell)
    }

    fn step(&mut self, action: &usize) -> Result<EnvStep<usize>> {
        let mut rng = self.rng.clone();
        let out = self.transition(self.cell, *action, &mut rng)?;
        self.rng = rng;
        self.cell = out.next;
        self.steps += 1;
        Ok(EnvStep {
            obs: self.index(out.next),
            reward: out.reward,
            flags: out.flags.to_vec(),
            done: out.done,
            truncated: !out.done && self.steps >= self.cfg.max_steps,
        })
    }
}
