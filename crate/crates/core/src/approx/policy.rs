use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::param::{Layout, ParamVector};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Squashed actions are kept this far inside the bounds so their log-density stays finite.
const SQUASH_EDGE: f64 = 1e-9;

/// Stochastic policy with differentiable log-probabilities.
pub trait Policy {
    type Obs;
    type Action: Clone;

    fn params(&self) -> &ParamVector;
    fn params_mut(&mut self) -> &mut ParamVector;

    fn log_prob(&self, obs: &Self::Obs, action: &Self::Action) -> Result<f64>;

    /// `∇_θ log π(action | obs)`, laid out like [`Policy::params`].
    fn log_prob_grad(&self, obs: &Self::Obs, action: &Self::Action) -> Result<ParamVector>;

    fn sample<R: Rng + ?Sized>(&self, obs: &Self::Obs, rng: &mut R) -> Result<Self::Action>;

    /// The full action distribution, when the action space is finite.
    fn enumerate_actions(&self, _obs: &Self::Obs) -> Result<Option<Vec<(Self::Action, f64)>>> {
        Ok(None)
    }
}

/// Family tag used by configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFamily {
    TabularSoftmax,
    Mlp,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(logits: &[f64], action: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[action] - lse
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // rounding left a sliver of mass past the last bucket
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Softmax over a table of logits, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftmax {
    states: usize,
    actions: usize,
    params: ParamVector,
}

impl TabularSoftmax {
    pub fn new(states: usize, actions: usize) -> Self {
        let layout = Layout::builder().block("logits", &[states, actions]).build();
        Self {
            states,
            actions,
            params: ParamVector::zeros(layout),
        }
    }

    pub fn from_logits(states: usize, actions: usize, logits: Vec<f64>) -> Result<Self> {
        let mut p = Self::new(states, actions);
        p.params = ParamVector::from_values(Arc::clone(&p.params.layout), logits)?;
        Ok(p)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    fn row(&self, s: usize) -> Result<&[f64]> {
        if s >= self.states {
            return Err(Error::InvalidArgument(format!(
                "state {s} outside tabular policy of {} states",
                self.states
            )));
        }
        let row = &self.params.values[s * self.actions..(s + 1) * self.actions];
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters"));
        }
        Ok(row)
    }

    pub fn probs(&self, s: usize) -> Result<Vec<f64>> {
        Ok(softmax(self.row(s)?))
    }

    /// Row-major `[s][a]` table of action probabilities.
    pub fn prob_table(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.states * self.actions);
        for s in 0..self.states {
            out.extend(self.probs(s)?);
        }
        Ok(out)
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.actions {
            return Err(Error::InvalidArgument(format!(
                "action {a} outside {} actions",
                self.actions
            )));
        }
        Ok(())
    }
}

impl Policy for TabularSoftmax {
    type Obs = usize;
    type Action = usize;

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn log_prob(&self, obs: &usize, action: &usize) -> Result<f64> {
        self.check_action(*action)?;
        Ok(log_softmax_at(self.row(*obs)?, *action))
    }

    fn log_prob_grad(&self, obs: &usize, action: &usize) -> Result<ParamVector> {
        self.check_action(*action)?;
        let probs = self.probs(*obs)?;
        let mut grad = self.params.zeros_like();
        let row = &mut grad.values[obs * self.actions..(obs + 1) * self.actions];
        for (b, (g, p)) in row.iter_mut().zip(&probs).enumerate() {
            *g = f64::from(u8::from(b == *action)) - p;
        }
        Ok(grad)
    }

    fn sample<R: Rng + ?Sized>(&self, obs: &usize, rng: &mut R) -> Result<usize> {
        Ok(sample_categorical(&self.probs(*obs)?, rng))
    }

    fn enumerate_actions(&self, obs: &usize) -> Result<Option<Vec<(usize, f64)>>> {
        Ok(Some(self.probs(*obs)?.into_iter().enumerate().collect()))
    }
}

/// Categorical policy whose logits come from an MLP over observation features.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCategorical {
    mlp: Mlp,
    params: ParamVector,
}

impl MlpCategorical {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], actions: usize, rng: &mut R) -> Self {
        let sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(actions))
            .collect();
        let (builder, mlp) = Mlp::register(Layout::builder(), "", &sizes, 0);
        let mut params = ParamVector::zeros(builder.build());
        mlp.init(&mut params.values, rng, 0.01);
        Self { mlp, params }
    }

    pub fn actions(&self) -> usize {
        self.mlp.output_size()
    }

    fn logits(&self, obs: &[f64]) -> Result<super::mlp::MlpCache> {
        if obs.len() != self.mlp.input_size() {
            return Err(Error::Shape(format!(
                "observation of length {}, expected {}",
                obs.len(),
                self.mlp.input_size()
            )));
        }
        self.params.ensure_finite("policy parameters")?;
        Ok(self.mlp.forward(&self.params.values, obs))
    }

    pub fn probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(self.logits(obs)?.output()))
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.actions() {
            return Err(Error::InvalidArgument(format!(
                "action {a} outside {} actions",
                self.actions()
            )));
        }
        Ok(())
    }
}

impl Policy for MlpCategorical {
    type Obs = Vec<f64>;
    type Action = usize;

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn log_prob(&self, obs: &Vec<f64>, action: &usize) -> Result<f64> {
        self.check_action(*action)?;
        Ok(log_softmax_at(self.logits(obs)?.output(), *action))
    }

    fn log_prob_grad(&self, obs: &Vec<f64>, action: &usize) -> Result<ParamVector> {
        self.check_action(*action)?;
        let cache = self.logits(obs)?;
        let probs = softmax(cache.output());
        let d_out: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(b, p)| f64::from(u8::from(b == *action)) - p)
            .collect();
        let mut grad = self.params.zeros_like();
        self.mlp.backward(&self.params.values, &cache, &d_out, &mut grad.values);
        Ok(grad)
    }

    fn sample<R: Rng + ?Sized>(&self, obs: &Vec<f64>, rng: &mut R) -> Result<usize> {
        Ok(sample_categorical(&self.probs(obs)?, rng))
    }

    fn enumerate_actions(&self, obs: &Vec<f64>) -> Result<Option<Vec<(usize, f64)>>> {
        Ok(Some(self.probs(obs)?.into_iter().enumerate().collect()))
    }
}

/// Tanh-squashed Gaussian over a box of continuous actions.
///
/// The MLP produces the pre-squash mean; log-standard-deviations are a separate,
/// state-independent parameter block clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
/// Actions are `bound * tanh(u)` with `u ~ N(mean, std)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedGaussian {
    mlp: Mlp,
    bounds: Vec<f64>,
    log_std_start: usize,
    params: ParamVector,
}

impl SquashedGaussian {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        bounds: Vec<f64>,
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let dim = bounds.len();
        let sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(dim))
            .collect();
        let (builder, mlp) = Mlp::register(Layout::builder(), "mean.", &sizes, 0);
        let log_std_start = mlp.param_count();
        let mut params = ParamVector::zeros(builder.block("log_std", &[dim]).build());
        mlp.init(&mut params.values, rng, 0.01);
        params.values[log_std_start..]
            .iter_mut()
            .for_each(|v| *v = init_log_std);
        Self {
            mlp,
            bounds,
            log_std_start,
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    fn raw_log_std(&self) -> &[f64] {
        &self.params.values[self.log_std_start..]
    }

    pub fn log_std(&self) -> Vec<f64> {
        self.raw_log_std()
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    /// Pre-squash mean of the Gaussian at `obs`.
    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(obs)?.output().to_vec())
    }

    fn forward(&self, obs: &[f64]) -> Result<super::mlp::MlpCache> {
        if obs.len() != self.mlp.input_size() {
            return Err(Error::Shape(format!(
                "observation of length {}, expected {}",
                obs.len(),
                self.mlp.input_size()
            )));
        }
        self.params.ensure_finite("policy parameters")?;
        Ok(self.mlp.forward(&self.params.values, obs))
    }

    /// Pre-squash coordinates of an action.
    fn unsquash(&self, action: &[f64]) -> Result<Vec<f64>> {
        if action.len() != self.dim() {
            return Err(Error::Shape(format!(
                "action of length {}, expected {}",
                action.len(),
                self.dim()
            )));
        }
        action
            .iter()
            .zip(&self.bounds)
            .map(|(a, b)| {
                let x = a / b;
                if !x.is_finite() || x.abs() >= 1.0 {
                    Err(Error::InvalidArgument(format!("action {a} outside open bound ±{b}")))
                } else {
                    Ok(x.atanh())
                }
            })
            .collect()
    }
}

impl Policy for SquashedGaussian {
    type Obs = Vec<f64>;
    type Action = Vec<f64>;

    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn log_prob(&self, obs: &Vec<f64>, action: &Vec<f64>) -> Result<f64> {
        let u = self.unsquash(action)?;
        let cache = self.forward(obs)?;
        let mean = cache.output();
        let mut lp = 0.0;
        for d in 0..self.dim() {
            let log_std = self.raw_log_std()[d].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (u[d] - mean[d]) / log_std.exp();
            let x = action[d] / self.bounds[d];
            lp += -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln() - (self.bounds[d] * (1.0 - x * x)).ln();
        }
        Ok(lp)
    }

    fn log_prob_grad(&self, obs: &Vec<f64>, action: &Vec<f64>) -> Result<ParamVector> {
        let u = self.unsquash(action)?;
        let cache = self.forward(obs)?;
        let mean = cache.output();
        let mut grad = self.params.zeros_like();
        let mut d_mean = vec![0.0; self.dim()];
        for d in 0..self.dim() {
            let raw = self.raw_log_std()[d];
            let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let var = (2.0 * log_std).exp();
            let diff = u[d] - mean[d];
            d_mean[d] = diff / var;
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                grad.values[self.log_std_start + d] = diff * diff / var - 1.0;
            }
        }
        self.mlp
            .backward(&self.params.values, &cache, &d_mean, &mut grad.values);
        Ok(grad)
    }

    fn sample<R: Rng + ?Sized>(&self, obs: &Vec<f64>, rng: &mut R) -> Result<Vec<f64>> {
        let mean = self.mean(obs)?;
        let log_std = self.log_std();
        Ok((0..self.dim())
            .map(|d| {
                let n: f64 = rng.sample(StandardNormal);
                let squashed = (mean[d] + log_std[d].exp() * n)
                    .tanh()
                    .clamp(-1.0 + SQUASH_EDGE, 1.0 - SQUASH_EDGE);
                self.bounds[d] * squashed
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::finite_diff::finite_diff_check;
    use crate::seed::rng_from_seed;

    #[test]
    fn uniform_tabular_log_prob() {
        let p = TabularSoftmax::new(3, 2);
        assert!((p.log_prob(&1, &0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_tabular_gradient() {
        let p = TabularSoftmax::new(2, 4);
        let g = p.log_prob_grad(&1, &2).unwrap();
        assert!((g.values[4 + 2] - (1.0 - 0.25)).abs() < 1e-15);
        assert!((g.values[4] + 0.25).abs() < 1e-15);
        assert!(g.values[..4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tabular_rejects_non_finite_and_bad_action() {
        let mut p = TabularSoftmax::new(2, 2);
        assert!(matches!(p.log_prob(&0, &5), Err(Error::InvalidArgument(_))));
        p.params_mut().values[1] = f64::NAN;
        assert_eq!(p.log_prob(&0, &0), Err(Error::NonFinite("policy parameters")));
        assert_eq!(
            p.log_prob_grad(&0, &0).map(|_| ()),
            Err(Error::NonFinite("policy parameters"))
        );
    }

    #[test]
    fn softmax_probability_conservation() {
        let mut rng = rng_from_seed(3);
        let logits: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        let p = TabularSoftmax::from_logits(3, 4, logits).unwrap();
        for s in 0..3 {
            let probs = p.probs(s).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            // Σ_a ∂π(a)/∂θ_j = Σ_a π(a) ∂logπ(a)/∂θ_j = 0
            let mut total = p.params().zeros_like();
            for (a, pa) in probs.iter().enumerate() {
                total.add_scaled(&p.log_prob_grad(&s, &a).unwrap(), *pa);
            }
            assert!(total.values.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn mlp_categorical_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let base = MlpCategorical::new(3, &[8, 8], 4, &mut rng);
        let obs = vec![0.3, -0.7, 1.1];
        for _ in 0..10 {
            let mut policy = base.clone();
            for v in policy.params_mut().values.iter_mut() {
                *v += 0.5 * (rng.random::<f64>() - 0.5);
            }
            for action in 0..4 {
                let err = finite_diff_check(
                    |theta| {
                        let mut p = policy.clone();
                        p.params_mut().values.copy_from_slice(theta);
                        p.log_prob(&obs, &action)
                    },
                    |theta| {
                        let mut p = policy.clone();
                        p.params_mut().values.copy_from_slice(theta);
                        Ok(p.log_prob_grad(&obs, &action)?.values)
                    },
                    &policy.params().values,
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "relative error {err}");
            }
        }
    }

    #[test]
    fn squashed_gaussian_matches_finite_differences() {
        let mut rng = rng_from_seed(5);
        let policy = SquashedGaussian::new(4, &[16, 16], vec![1.5, 0.5], -0.3, &mut rng);
        let obs = vec![0.1, 0.2, -0.4, 0.9];
        let action = policy.sample(&obs, &mut rng).unwrap();
        let err = finite_diff_check(
            |theta| {
                let mut p = policy.clone();
                p.params_mut().values.copy_from_slice(theta);
                p.log_prob(&obs, &action)
            },
            |theta| {
                let mut p = policy.clone();
                p.params_mut().values.copy_from_slice(theta);
                Ok(p.log_prob_grad(&obs, &action)?.values)
            },
            &policy.params().values,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn squashed_gaussian_density_integrates_to_one() {
        let mut rng = rng_from_seed(9);
        let mut policy = SquashedGaussian::new(2, &[8], vec![2.0], -0.7, &mut rng);
        let obs = vec![0.5, -0.5];
        // shift the mean so the density is asymmetric
        let bias = policy.params().layout.block("mean.l1.bias").unwrap().start;
        policy.params_mut().values[bias] = 0.4;
        let n = 200_000;
        let width = 4.0 / n as f64;
        let mass: f64 = (0..n)
            .map(|k| {
                let a = -2.0 + (k as f64 + 0.5) * width;
                policy.log_prob(&obs, &vec![a]).unwrap().exp() * width
            })
            .sum();
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    #[test]
    fn log_std_is_clamped() {
        let mut rng = rng_from_seed(2);
        let mut policy = SquashedGaussian::new(1, &[4], vec![1.0], 0.0, &mut rng);
        let start = policy.params().layout.block("log_std").unwrap().start;
        policy.params_mut().values[start] = 9.0;
        assert_eq!(policy.log_std(), vec![LOG_STD_MAX]);
        policy.params_mut().values[start] = -9.0;
        assert_eq!(policy.log_std(), vec![LOG_STD_MIN]);
        let g = policy.log_prob_grad(&vec![0.0], &vec![0.2]).unwrap();
        assert_eq!(g.values[start], 0.0);
    }

    #[test]
    fn samples_stay_inside_bounds() {
        let mut rng = rng_from_seed(4);
        let policy = SquashedGaussian::new(1, &[4], vec![0.5], 2.0, &mut rng);
        for _ in 0..1000 {
            let a = policy.sample(&vec![0.0], &mut rng).unwrap();
            assert!(a[0].abs() < 0.5);
            assert!(policy.log_prob(&vec![0.0], &a).unwrap().is_finite());
        }
    }
}
