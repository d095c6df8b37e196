use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::param::{Layout, ParamVector};
use crate::error::{Error, Result};

/// Differentiable state-action value approximator.
pub trait QFunction {
    type Obs;
    type Action;

    fn params(&self) -> &ParamVector;
    fn params_mut(&mut self) -> &mut ParamVector;

    /// Unclamped estimate.
    fn value(&self, obs: &Self::Obs, action: &Self::Action) -> Result<f64>;

    fn value_grad(&self, obs: &Self::Obs, action: &Self::Action) -> Result<ParamVector>;
}

/// How a critic's output is post-processed when evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticRole {
    Task,
    /// Returns of a {0,1} signal: clamped at zero.
    Safety,
}

pub fn critic_eval<Q: QFunction>(critic: &Q, obs: &Q::Obs, action: &Q::Action, role: CriticRole) -> Result<f64> {
    let v = critic.value(obs, action)?;
    if !v.is_finite() {
        return Err(Error::NonFinite("critic output"));
    }
    Ok(match role {
        CriticRole::Task => v,
        CriticRole::Safety => v.max(0.0),
    })
}

pub fn critic_grad<Q: QFunction>(critic: &Q, obs: &Q::Obs, action: &Q::Action) -> Result<ParamVector> {
    critic.value_grad(obs, action)
}

/// Lookup table `Q[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    states: usize,
    actions: usize,
    params: ParamVector,
}

impl TabularQ {
    pub fn new(states: usize, actions: usize) -> Self {
        let layout = Layout::builder().block("q", &[states, actions]).build();
        Self {
            states,
            actions,
            params: ParamVector::zeros(layout),
        }
    }

    pub fn from_table(states: usize, actions: usize, table: Vec<f64>) -> Result<Self> {
        let mut q = Self::new(states, actions);
        q.params = ParamVector::from_values(Arc::clone(&q.params.layout), table)?;
        Ok(q)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn table(&self) -> &[f64] {
        &self.params.values
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.params.values[s * self.actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.params.values[s * self.actions + a] = v;
    }

    fn index(&self, s: usize, a: usize) -> Result<usize> {
        if s >= self.states || a >= self.actions {
            return Err(Error::InvalidArgument(format!(
                "({s}, {a}) outside {}x{} table",
                self.states, self.actions
            )));
        }
        Ok(s * self.actions + a)
    }
}

impl QFunction for TabularQ {
    type Obs = usize;
    type Action = usize;

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn value(&self, obs: &usize, action: &usize) -> Result<f64> {
        Ok(self.params.values[self.index(*obs, *action)?])
    }

    fn value_grad(&self, obs: &usize, action: &usize) -> Result<ParamVector> {
        let k = self.index(*obs, *action)?;
        let mut g = self.params.zeros_like();
        g.values[k] = 1.0;
        Ok(g)
    }
}

/// Encodes an action as critic input features.
pub trait ActionFeatures {
    fn write_features(&self, width: usize, out: &mut Vec<f64>) -> Result<()>;
}

impl ActionFeatures for usize {
    /// One-hot of length `width`.
    fn write_features(&self, width: usize, out: &mut Vec<f64>) -> Result<()> {
        if *self >= width {
            return Err(Error::InvalidArgument(format!("action {self} outside {width} actions")));
        }
        out.extend((0..width).map(|k| f64::from(u8::from(k == *self))));
        Ok(())
    }
}

impl ActionFeatures for Vec<f64> {
    fn write_features(&self, width: usize, out: &mut Vec<f64>) -> Result<()> {
        if self.len() != width {
            return Err(Error::Shape(format!(
                "action of length {}, expected {width}",
                self.len()
            )));
        }
        out.extend_from_slice(self);
        Ok(())
    }
}

/// MLP over `[observation features, action features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpQ<A> {
    mlp: Mlp,
    obs_dim: usize,
    action_width: usize,
    /// Multiplies action features before they enter the network.
    action_scale: f64,
    params: ParamVector,
    _action: std::marker::PhantomData<A>,
}

impl<A: ActionFeatures> MlpQ<A> {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_width: usize, hidden: &[usize], rng: &mut R) -> Self {
        let sizes: Vec<usize> = std::iter::once(obs_dim + action_width)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let (builder, mlp) = Mlp::register(Layout::builder(), "", &sizes, 0);
        let mut params = ParamVector::zeros(builder.build());
        mlp.init(&mut params.values, rng, 1.0);
        Self {
            mlp,
            obs_dim,
            action_width,
            action_scale: 1.0,
            params,
            _action: std::marker::PhantomData,
        }
    }

    pub fn with_action_scale(mut self, scale: f64) -> Self {
        self.action_scale = scale;
        self
    }

    /// Same architecture with every weight zero.
    pub fn zeroed(mut self) -> Self {
        self.params.values.iter_mut().for_each(|v| *v = 0.0);
        self
    }

    fn input(&self, obs: &[f64], action: &A) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation of length {}, expected {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let mut x = Vec::with_capacity(self.obs_dim + self.action_width);
        x.extend_from_slice(obs);
        action.write_features(self.action_width, &mut x)?;
        x[self.obs_dim..].iter_mut().for_each(|v| *v *= self.action_scale);
        Ok(x)
    }
}

impl<A: ActionFeatures> QFunction for MlpQ<A> {
    type Obs = Vec<f64>;
    type Action = A;

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn value(&self, obs: &Vec<f64>, action: &A) -> Result<f64> {
        self.params.ensure_finite("critic parameters")?;
        let x = self.input(obs, action)?;
        Ok(self.mlp.forward(&self.params.values, &x).output()[0])
    }

    fn value_grad(&self, obs: &Vec<f64>, action: &A) -> Result<ParamVector> {
        self.params.ensure_finite("critic parameters")?;
        let x = self.input(obs, action)?;
        let cache = self.mlp.forward(&self.params.values, &x);
        let mut g = self.params.zeros_like();
        self.mlp.backward(&self.params.values, &cache, &[1.0], &mut g.values);
        Ok(g)
    }
}

/// Task critic `Q_R` plus one safety critic `Q_{C_i}` per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSet<Q> {
    pub task: Q,
    pub safety: Vec<Q>,
}

impl<Q: QFunction> CriticSet<Q> {
    pub fn new(task: Q, safety: Vec<Q>) -> Self {
        Self { task, safety }
    }

    pub fn constraint_count(&self) -> usize {
        self.safety.len()
    }

    pub fn task_value(&self, obs: &Q::Obs, action: &Q::Action) -> Result<f64> {
        critic_eval(&self.task, obs, action, CriticRole::Task)
    }

    /// Clamped safety estimates, one per constraint.
    pub fn safety_values(&self, obs: &Q::Obs, action: &Q::Action) -> Result<Vec<f64>> {
        self.safety
            .iter()
            .map(|c| critic_eval(c, obs, action, CriticRole::Safety))
            .collect()
    }

    pub fn ensure_constraints(&self, expected: usize) -> Result<()> {
        if self.safety.len() != expected {
            return Err(Error::ConstraintCount {
                expected,
                got: self.safety.len(),
            });
        }
        Ok(())
    }
}
