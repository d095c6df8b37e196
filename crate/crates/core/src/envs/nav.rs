use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvStep, Environment};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Disc whose center follows `base + amplitude * sin(2π t / period + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscObstacle {
    pub base: [f64; 2],
    pub amplitude: [f64; 2],
    pub period: f64,
    pub phase: f64,
    pub radius: f64,
}

impl DiscObstacle {
    pub fn center(&self, time: f64) -> [f64; 2] {
        let s = (2.0 * PI * time / self.period + self.phase).sin();
        [
            self.base[0] + self.amplitude[0] * s,
            self.base[1] + self.amplitude[1] * s,
        ]
    }

    pub fn velocity(&self, time: f64) -> [f64; 2] {
        let w = 2.0 * PI / self.period;
        let c = (w * time + self.phase).cos() * w;
        [self.amplitude[0] * c, self.amplitude[1] * c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointNav2DConfig {
    /// Axis-aligned workspace `[min, max]` corners, meters.
    pub workspace: [[f64; 2]; 2],
    pub goal: [f64; 2],
    pub goal_radius: f64,
    /// Start positions are drawn uniformly from this box `[min, max]`.
    pub start_box: [[f64; 2]; 2],
    /// Collision channel (constraint 0), terminal.
    pub obstacles: Vec<DiscObstacle>,
    /// Out-of-bounds channel (constraint 1): flagged within this distance of an edge.
    pub boundary_margin: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub time_penalty: f64,
    pub max_steps: usize,
}

impl PointNav2DConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::EnvInput(m));
        let [lo, hi] = self.workspace;
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return bad("workspace must have positive extent".into());
        }
        if !(self.dt > 0.0) || !(self.max_speed > 0.0) || self.max_steps == 0 {
            return bad("dt, max_speed and max_steps must be positive".into());
        }
        if !(self.goal_radius > 0.0) || self.obstacles.iter().any(|o| !(o.radius > 0.0)) {
            return bad("radii must be positive".into());
        }
        if self.obstacles.iter().any(|o| !(o.period > 0.0)) {
            return bad("obstacle periods must be positive".into());
        }
        let inside = |p: [f64; 2]| p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1];
        if !inside(self.goal) {
            return bad(format!("goal {:?} outside the workspace", self.goal));
        }
        if !inside(self.start_box[0]) || !inside(self.start_box[1]) {
            return bad("start box outside the workspace".into());
        }
        if !(self.boundary_margin >= 0.0) || !(self.time_penalty >= 0.0) {
            return bad("boundary_margin and time_penalty must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub pos: [f64; 2],
    pub step: usize,
}

/// Point robot in a rectangle with moving disc obstacles.
#[derive(Debug, Clone)]
pub struct PointNav2D {
    cfg: PointNav2DConfig,
    state: NavState,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl PointNav2D {
    pub fn new(cfg: PointNav2DConfig) -> Result<Self> {
        cfg.validate()?;
        let state = NavState {
            pos: cfg.start_box[0],
            step: 0,
        };
        Ok(Self { cfg, state })
    }

    pub fn config(&self) -> &PointNav2DConfig {
        &self.cfg
    }

    pub fn state(&self) -> NavState {
        self.state
    }

    pub fn set_state(&mut self, state: NavState) {
        self.state = state;
    }

    pub fn obs_dim(&self) -> usize {
        6 + 5 * self.cfg.obstacles.len()
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.cfg.dt
    }

    pub fn collides(&self, pos: [f64; 2], step: usize) -> bool {
        let t = self.time(step);
        self.cfg.obstacles.iter().any(|o| dist(pos, o.center(t)) < o.radius)
    }

    pub fn near_boundary(&self, pos: [f64; 2]) -> bool {
        let [lo, hi] = self.cfg.workspace;
        let m = self.cfg.boundary_margin;
        pos[0] < lo[0] + m || pos[0] > hi[0] - m || pos[1] < lo[1] + m || pos[1] > hi[1] - m
    }

    /// Normalized features: position, offset to goal, distance to the nearest
    /// edge pair, and per obstacle its offset, velocity and clearance.
    pub fn observe(&self, state: NavState) -> Vec<f64> {
        let [lo, hi] = self.cfg.workspace;
        let w = hi[0] - lo[0];
        let h = hi[1] - lo[1];
        let scale = w.max(h);
        let p = state.pos;
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.push(2.0 * (p[0] - lo[0]) / w - 1.0);
        obs.push(2.0 * (p[1] - lo[1]) / h - 1.0);
        obs.push((self.cfg.goal[0] - p[0]) / scale);
        obs.push((self.cfg.goal[1] - p[1]) / scale);
        obs.push((p[0] - lo[0]).min(hi[0] - p[0]) / self.cfg.boundary_margin.max(1e-6) / 4.0);
        obs.push((p[1] - lo[1]).min(hi[1] - p[1]) / self.cfg.boundary_margin.max(1e-6) / 4.0);
        let t = self.time(state.step);
        for o in &self.cfg.obstacles {
            let c = o.center(t);
            let v = o.velocity(t);
            obs.push((c[0] - p[0]) / scale * 4.0);
            obs.push((c[1] - p[1]) / scale * 4.0);
            obs.push(v[0] * self.cfg.dt / o.radius);
            obs.push(v[1] * self.cfg.dt / o.radius);
            obs.push(((dist(p, c) - o.radius) / o.radius).min(4.0));
        }
        obs
    }

    /// Clips a velocity command to the speed limit.
    pub fn clip_action(&self, action: &[f64]) -> Result<[f64; 2]> {
        if action.len() != 2 {
            return Err(Error::EnvInput(format!(
                "action of length {}, expected 2",
                action.len()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::EnvInput("non-finite action".into()));
        }
        let speed = (action[0] * action[0] + action[1] * action[1]).sqrt();
        let k = if speed > self.cfg.max_speed {
            self.cfg.max_speed / speed
        } else {
            1.0
        };
        Ok([action[0] * k, action[1] * k])
    }

    /// Pure transition from `state`.
    pub fn transition(&self, state: NavState, action: &[f64]) -> Result<(NavState, f64, [u8; 2], bool)> {
        let v = self.clip_action(action)?;
        let [lo, hi] = self.cfg.workspace;
        let pos = [
            (state.pos[0] + v[0] * self.cfg.dt).clamp(lo[0], hi[0]),
            (state.pos[1] + v[1] * self.cfg.dt).clamp(lo[1], hi[1]),
        ];
        let next = NavState {
            pos,
            step: state.step + 1,
        };
        let progress = dist(state.pos, self.cfg.goal) - dist(pos, self.cfg.goal);
        let reward = progress - self.cfg.time_penalty;
        let collision = self.collides(pos, next.step);
        let flags = [u8::from(collision), u8::from(self.near_boundary(pos))];
        let done = collision || dist(pos, self.cfg.goal) < self.cfg.goal_radius;
        Ok((next, reward, flags, done))
    }
}

impl Environment for PointNav2D {
    type Obs = Vec<f64>;
    type Action = Vec<f64>;

    fn constraint_count(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let [lo, hi] = self.cfg.start_box;
        let pos = [
            lo[0] + (hi[0] - lo[0]) * rng.random::<f64>(),
            lo[1] + (hi[1] - lo[1]) * rng.random::<f64>(),
        ];
        self.state = NavState { pos, step: 0 };
        self.observe(self.state)
    }

    fn step(&mut self, action: &Vec<f64>) -> Result<EnvStep<Vec<f64>>> {
        let (next, reward, flags, done) = self.transition(self.state, action)?;
        self.state = next;
        Ok(EnvStep {
            obs: self.observe(next),
            reward,
            flags: flags.to_vec(),
            done,
            truncated: !done && next.step >= self.cfg.max_steps,
        })
    }
}
