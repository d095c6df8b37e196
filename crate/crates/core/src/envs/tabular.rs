use rand::Rng;

use super::{EnvStep, Environment};
use crate::error::{Error, Result};
use crate::mdp::CmdpSpec;
use crate::seed::{rng_from_seed, Rng as SeededRng};

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples episodes from an explicit [`CmdpSpec`].
#[derive(Debug, Clone)]
pub struct TabularEnv {
    spec: CmdpSpec,
    terminal: Vec<bool>,
    max_steps: usize,
    rng: SeededRng,
    state: usize,
    steps: usize,
}

impl TabularEnv {
    /// `terminal` marks states that end the episode when entered.
    pub fn new(spec: CmdpSpec, terminal: Vec<bool>, max_steps: usize) -> Result<Self> {
        if terminal.len() != spec.state_count {
            return Err(Error::Shape(format!(
                "{} terminal flags for {} states",
                terminal.len(),
                spec.state_count
            )));
        }
        Ok(Self {
            spec,
            terminal,
            max_steps,
            rng: rng_from_seed(0),
            state: 0,
            steps: 0,
        })
    }

    pub fn spec(&self) -> &CmdpSpec {
        &self.spec
    }
}

impl Environment for TabularEnv {
    type Obs = usize;
    type Action = usize;

    fn constraint_count(&self) -> usize {
        self.spec.constraint_count()
    }

    fn reset(&mut self, seed: u64) -> usize {
        self.rng = rng_from_seed(seed);
        self.state = draw(&self.spec.initial_dist, &mut self.rng);
        self.steps = 0;
        self.state
    }

    fn step(&mut self, action: &usize) -> Result<EnvStep<usize>> {
        if *action >= self.spec.action_count {
            return Err(Error::EnvInput(format!("action {action} out of range")));
        }
        let (s, a) = (self.state, *action);
        let next = draw(self.spec.row(s, a), &mut self.rng);
        let reward = self.spec.r(s, a, next);
        let flags = self.spec.constraints.iter().map(|c| c.indicator[next]).collect();
        self.state = next;
        self.steps += 1;
        let done = self.terminal[next];
        Ok(EnvStep {
            obs: next,
            reward,
            flags,
            done,
            truncated: !done && self.steps >= self.max_steps,
        })
    }
}
