//! Online training of the task critic and the per-constraint safety critics.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::approx::{critic_eval, CriticRole, CriticSet, Optimizer, OptimizerKind, ParamVector, QFunction};
use crate::error::{Error, Result};
use crate::mdp::{discounted_return, Channel, Trajectory};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMethod {
    Td0,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetUpdate {
    None,
    Polyak(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticTrainConfig {
    pub method: CriticMethod,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub target_update: TargetUpdate,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Passes over each iteration's data.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sgd
}

fn default_epochs() -> usize {
    1
}

impl CriticTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("critic learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "critic batch_size and epochs must be positive".into(),
            ));
        }
        if let TargetUpdate::Polyak(tau) = self.target_update {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::InvalidArgument(format!("polyak tau {tau} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// One transition of a single reward channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTransition<O, A> {
    pub obs: O,
    pub action: A,
    pub value: f64,
    /// Successor pair to bootstrap from; `None` at terminal states.
    pub next: Option<(O, A)>,
}

/// Semi-gradient TD(0) step toward `r + discount * Q(s', a')`; returns the signed TD error.
pub fn td_update<Q: QFunction>(
    critic: &mut Q,
    transition: &ChannelTransition<Q::Obs, Q::Action>,
    discount: f64,
    lr: f64,
    role: CriticRole,
) -> Result<f64> {
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::InvalidArgument(format!("discount {discount} outside [0, 1)")));
    }
    let bootstrap = match &transition.next {
        Some((o, a)) => critic_eval(critic, o, a, role)?,
        None => 0.0,
    };
    let target = transition.value + discount * bootstrap;
    if !target.is_finite() {
        return Err(Error::NonFinite("td target"));
    }
    let current = critic.value(&transition.obs, &transition.action)?;
    let td_error = target - current;
    let grad = critic.value_grad(&transition.obs, &transition.action)?;
    critic.params_mut().add_scaled(&grad, lr * td_error);
    Ok(td_error)
}

/// One gradient step on `½·mean (Q(s,a) - G)²`; returns the pre-step mean squared residual.
pub fn mc_regress<Q: QFunction>(critic: &mut Q, batch: &[(Q::Obs, Q::Action, f64)], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grad = critic.params().zeros_like();
    let mut sse = 0.0;
    for (o, a, g) in batch {
        if !g.is_finite() {
            return Err(Error::NonFinite("regression target"));
        }
        let residual = critic.value(o, a)? - g;
        sse += residual * residual;
        grad.add_scaled(&critic.value_grad(o, a)?, residual);
    }
    let n = batch.len() as f64;
    critic.params_mut().add_scaled(&grad, -lr / n);
    Ok(sse / n)
}

/// Splits trajectories into channel transitions. Truncated final steps have no
/// successor action and are dropped for TD; Monte-Carlo keeps them.
pub fn channel_transitions<O: Clone, A: Clone>(
    trajectories: &[Trajectory<O, A>],
    channel: Channel,
) -> Result<Vec<ChannelTransition<O, A>>> {
    let mut out = Vec::new();
    for traj in trajectories {
        if let Channel::Constraint(i) = channel {
            let count = traj.constraint_count();
            if i >= count {
                return Err(Error::UnknownChannel { index: i, count });
            }
        }
        let len = traj.steps.len();
        for (t, step) in traj.steps.iter().enumerate() {
            let value = match channel {
                Channel::Task => step.task_reward,
                Channel::Constraint(i) => f64::from(step.constraint_flags[i]),
            };
            let next = if t + 1 < len {
                let n = &traj.steps[t + 1];
                Some((n.state.clone(), n.action.clone()))
            } else if traj.terminal {
                None
            } else {
                continue;
            };
            out.push(ChannelTransition {
                obs: step.state.clone(),
                action: step.action.clone(),
                value,
                next,
            });
        }
    }
    Ok(out)
}

/// Trainer state for one critic: optimizer and optional target network.
#[derive(Debug, Clone)]
pub struct CriticLearner {
    optimizer: Optimizer,
    target: Option<ParamVector>,
}

impl CriticLearner {
    pub fn new<Q: QFunction>(critic: &Q, cfg: &CriticTrainConfig) -> Self {
        let target = match cfg.target_update {
            TargetUpdate::None => None,
            TargetUpdate::Polyak(_) => Some(critic.params().clone()),
        };
        Self {
            optimizer: Optimizer::new(cfg.optimizer, cfg.learning_rate, critic.params().len()),
            target,
        }
    }
}

/// Trains one critic on one channel; returns the mean squared residual of the last epoch.
pub fn train_channel<Q>(
    critic: &mut Q,
    learner: &mut CriticLearner,
    trajectories: &[Trajectory<Q::Obs, Q::Action>],
    channel: Channel,
    discount: f64,
    role: CriticRole,
    cfg: &CriticTrainConfig,
    seed: u64,
) -> Result<f64>
where
    Q: QFunction + Clone,
    Q::Obs: Clone,
    Q::Action: Clone,
{
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    // (obs, action, fixed target or None, successor)
    let items: Vec<(Q::Obs, Q::Action, f64, Option<(Q::Obs, Q::Action)>)> = match cfg.method {
        CriticMethod::Td0 => channel_transitions(trajectories, channel)?
            .into_iter()
            .map(|t| (t.obs, t.action, t.value, t.next))
            .collect(),
        CriticMethod::MonteCarlo => {
            let mut v = Vec::new();
            for traj in trajectories {
                let returns = discounted_return(traj, channel, discount)?;
                for (step, g) in traj.steps.iter().zip(returns) {
                    v.push((step.state.clone(), step.action.clone(), g, None));
                }
            }
            v
        }
    };
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut last = 0.0;
    for _ in 0..cfg.epochs {
        if cfg.batch_size > 1 {
            order.shuffle(&mut rng);
        }
        let mut sse = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = critic.params().zeros_like();
            for &k in chunk {
                let (o, a, v, next) = &items[k];
                let target = match (cfg.method, next) {
                    (CriticMethod::Td0, Some((no, na))) => {
                        let boot = match &learner.target {
                            Some(tp) => {
                                let mut frozen = critic.clone();
                                frozen.params_mut().values.clone_from(&tp.values);
                                critic_eval(&frozen, no, na, role)?
                            }
                            None => critic_eval(critic, no, na, role)?,
                        };
                        v + discount * boot
                    }
                    _ => *v,
                };
                if !target.is_finite() {
                    return Err(Error::NonFinite("critic target"));
                }
                let residual = target - critic.value(o, a)?;
                sse += residual * residual;
                grad.add_scaled(&critic.value_grad(o, a)?, residual);
            }
            grad.scale(1.0 / chunk.len() as f64);
            learner.optimizer.step(critic.params_mut(), &grad);
            if let (Some(tp), TargetUpdate::Polyak(tau)) = (&mut learner.target, cfg.target_update) {
                for (t, p) in tp.values.iter_mut().zip(&critic.params().values) {
                    *t = tau * p + (1.0 - tau) * *t;
                }
            }
        }
        last = sse / items.len() as f64;
    }
    Ok(last)
}

/// Per-constraint training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticLossReport {
    pub task: f64,
    pub safety: Vec<f64>,
}

/// Trains each safety critic on its own flag channel with its own discount
/// (`discounts[i]` is `gamma_C` of constraint `i`).
pub fn train_safety_critics<Q>(
    critics: &mut CriticSet<Q>,
    learners: &mut [CriticLearner],
    trajectories: &[Trajectory<Q::Obs, Q::Action>],
    discounts: &[f64],
    cfg: &CriticTrainConfig,
    seed: u64,
) -> Result<Vec<f64>>
where
    Q: QFunction + Clone,
    Q::Obs: Clone,
    Q::Action: Clone,
{
    critics.ensure_constraints(discounts.len())?;
    if learners.len() != discounts.len() {
        return Err(Error::ConstraintCount {
            expected: discounts.len(),
            got: learners.len(),
        });
    }
    for traj in trajectories {
        if !traj.is_empty() && traj.constraint_count() != discounts.len() {
            return Err(Error::ConstraintCount {
                expected: discounts.len(),
                got: traj.constraint_count(),
            });
        }
    }
    let mut losses = Vec::with_capacity(discounts.len());
    for (i, ((critic, learner), &discount)) in critics
        .safety
        .iter_mut()
        .zip(learners.iter_mut())
        .zip(discounts)
        .enumerate()
    {
        losses.push(train_channel(
            critic,
            learner,
            trajectories,
            Channel::Constraint(i),
            discount,
            CriticRole::Safety,
            cfg,
            crate::seed::derive_indexed(seed, "safety-critic", i as u64),
        )?);
    }
    Ok(losses)
}
