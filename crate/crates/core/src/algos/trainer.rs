//! Iterative actor-critic training loop shared by all methods.

use serde::{Deserialize, Serialize};

use crate::approx::{Checkpoint, CriticRole, CriticSet, Optimizer, OptimizerKind, Policy, QFunction};
use crate::critics::{train_channel, train_safety_critics, CriticLearner, CriticTrainConfig};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::mdp::{Channel, Layer, Trajectory};
use crate::rollout::collect_batch;
use crate::seed::{derive_indexed, derive_seed, rng_from_seed};

use super::gradients::{reward_penalty_gradient, suppression_gradient, task_policy_gradient, Sample};
use super::proxy::{proxy_no_risk_prob, SuppressionConfig};
use super::safety::{train_recovery_policy, RecoveryConfig, SafetyLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Task policy ascends `Q_R - Σ w_i Q_{C_i}`; no safety layer.
    RewardPenalty,
    /// Task policy ascends `Q_R`; a safety layer defers to a recovery policy
    /// trained on the unweighted constraint cost.
    Recovery,
    /// Task policy uses the suppression estimator; no safety layer.
    Suppression,
    /// Suppression estimator plus a safety layer whose recovery policy is
    /// trained on the suppression-weighted cost.
    #[serde(alias = "suppression+recovery")]
    SuppressionRecovery,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::RewardPenalty,
        Method::Recovery,
        Method::Suppression,
        Method::SuppressionRecovery,
    ];

    pub fn uses_safety_layer(self) -> bool {
        matches!(self, Method::Recovery | Method::SuppressionRecovery)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::RewardPenalty => "reward_penalty",
            Method::Recovery => "recovery",
            Method::Suppression => "suppression",
            Method::SuppressionRecovery => "suppression_recovery",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub method: Method,
    /// Task discount.
    pub gamma: f64,
    /// Per-constraint discounts `gamma_C`.
    pub constraint_gammas: Vec<f64>,
    pub suppression: SuppressionConfig,
    pub recovery: RecoveryConfig,
    pub critic: CriticTrainConfig,
    pub episodes_per_iteration: usize,
    pub horizon: usize,
    /// Actions drawn per state when the policy cannot enumerate its actions.
    pub action_samples: usize,
    pub policy_optimizer: OptimizerKind,
}

impl TrainerConfig {
    pub fn validate(&self, constraints: usize) -> Result<()> {
        self.suppression.validate()?;
        self.suppression.ensure_constraints(constraints)?;
        self.critic.validate()?;
        for (what, len) in [
            ("constraint_gammas", self.constraint_gammas.len()),
            ("recovery.weights", self.recovery.weights.len()),
        ] {
            if len != constraints {
                return Err(Error::InvalidArgument(format!(
                    "{what} has {len} entries for {constraints} constraints"
                )));
            }
        }
        for g in std::iter::once(self.gamma).chain(self.constraint_gammas.iter().copied()) {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::InvalidArgument(format!("discount {g} outside (0, 1)")));
            }
        }
        if self.episodes_per_iteration == 0 || self.horizon == 0 || self.action_samples == 0 {
            return Err(Error::InvalidArgument(
                "episodes_per_iteration, horizon and action_samples must be positive".into(),
            ));
        }
        if !(self.recovery.lr > 0.0 && self.recovery.kappa > 0.0) {
            return Err(Error::InvalidArgument("recovery lr and kappa must be positive".into()));
        }
        Ok(())
    }

    /// Recovery objective as used by this method.
    pub fn effective_recovery(&self) -> RecoveryConfig {
        let mut r = self.recovery.clone();
        if self.method == Method::Recovery {
            r.suppression_weighted = false;
            r.include_task_term = false;
        } else {
            r.suppression_weighted = true;
        }
        r
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub task_return_mean: f64,
    /// Mean flagged steps per episode, per constraint.
    pub violations: Vec<f64>,
    pub p_minus_mean: f64,
    pub recovery_fraction: f64,
    pub grad_norm_task: f64,
    pub grad_norm_recovery: f64,
}

/// Aggregate of evaluation rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub return_mean: f64,
    pub violations: Vec<f64>,
    pub recovery_fraction: f64,
}

pub struct Trainer<E, P, Q> {
    pub env: E,
    pub task_policy: P,
    pub recovery_policy: P,
    pub critics: CriticSet<Q>,
    cfg: TrainerConfig,
    seed: u64,
    iteration: usize,
    episodes: u64,
    task_opt: Optimizer,
    recovery_opt: Optimizer,
    task_learner: CriticLearner,
    safety_learners: Vec<CriticLearner>,
}

impl<E, P, Q> Trainer<E, P, Q>
where
    E: Environment,
    P: Policy<Obs = E::Obs, Action = E::Action>,
    Q: QFunction<Obs = E::Obs, Action = E::Action> + Clone,
{
    pub fn new(
        env: E,
        task_policy: P,
        recovery_policy: P,
        critics: CriticSet<Q>,
        cfg: TrainerConfig,
        seed: u64,
    ) -> Result<Self> {
        let n = env.constraint_count();
        cfg.validate(n)?;
        critics.ensure_constraints(n)?;
        let task_opt = Optimizer::new(
            cfg.policy_optimizer,
            cfg.suppression.policy_lr,
            task_policy.params().len(),
        );
        let recovery_opt = Optimizer::new(cfg.policy_optimizer, cfg.recovery.lr, recovery_policy.params().len());
        let task_learner = CriticLearner::new(&critics.task, &cfg.critic);
        let safety_learners = critics
            .safety
            .iter()
            .map(|c| CriticLearner::new(c, &cfg.critic))
            .collect();
        Ok(Self {
            env,
            task_policy,
            recovery_policy,
            critics,
            cfg,
            seed,
            iteration: 0,
            episodes: 0,
            task_opt,
            recovery_opt,
            task_learner,
            safety_learners,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn layer_epsilon(&self) -> Vec<f64> {
        self.cfg.suppression.epsilon.clone()
    }

    /// Runs `iterations` training iterations.
    pub fn train(&mut self, iterations: usize) -> Result<Vec<IterationMetrics>> {
        (0..iterations).map(|_| self.train_step()).collect()
    }

    /// Collects one batch of episodes, updates the critics, then the policies.
    pub fn train_step(&mut self) -> Result<IterationMetrics> {
        let cfg = &self.cfg;
        let snapshot = self.critics.clone();
        let epsilon = self.layer_epsilon();
        let layer = cfg.method.uses_safety_layer().then_some(SafetyLayer {
            critics: &snapshot,
            epsilon,
            recovery: &self.recovery_policy,
        });
        let trajs = collect_batch(
            &mut self.env,
            &self.task_policy,
            layer.as_ref(),
            cfg.horizon,
            derive_seed(self.seed, "train"),
            self.episodes,
            cfg.episodes_per_iteration,
        )?;
        drop(layer);
        self.episodes += cfg.episodes_per_iteration as u64;
        let iter_seed = derive_indexed(self.seed, "iteration", self.iteration as u64);

        train_channel(
            &mut self.critics.task,
            &mut self.task_learner,
            &trajs,
            Channel::Task,
            cfg.gamma,
            CriticRole::Task,
            &cfg.critic,
            derive_seed(iter_seed, "task-critic"),
        )?;
        train_safety_critics(
            &mut self.critics,
            &mut self.safety_learners,
            &trajs,
            &cfg.constraint_gammas,
            &cfg.critic,
            iter_seed,
        )?;

        let mut rng = rng_from_seed(derive_seed(iter_seed, "batch"));
        let task_batch = action_batch(&self.task_policy, &trajs, cfg.action_samples, &mut rng)?;
        let grad_task = match cfg.method {
            Method::RewardPenalty => reward_penalty_gradient(
                &self.task_policy,
                &task_batch,
                &self.critics,
                &cfg.suppression.weights,
                cfg.suppression.normalize_advantage,
            )?,
            Method::Recovery => task_policy_gradient(
                &self.task_policy,
                &task_batch,
                &self.critics,
                cfg.suppression.normalize_advantage,
            )?,
            Method::Suppression | Method::SuppressionRecovery => {
                suppression_gradient(&self.task_policy, &task_batch, &self.critics, &cfg.suppression)?
            }
        };
        self.task_opt.step(self.task_policy.params_mut(), &grad_task);
        if !self.task_policy.params().is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                norm: grad_task.norm(),
            });
        }

        let mut grad_norm_recovery = 0.0;
        if cfg.method.uses_safety_layer() {
            let rec_batch = action_batch(&self.recovery_policy, &trajs, cfg.action_samples, &mut rng)?;
            let g = train_recovery_policy(
                &mut self.recovery_policy,
                &mut self.recovery_opt,
                &rec_batch,
                &self.critics,
                &cfg.effective_recovery(),
            )?;
            grad_norm_recovery = g.norm();
        }

        let summary = summarize(&trajs, self.env.constraint_count());
        let mut p_minus = 0.0;
        let mut steps = 0usize;
        for s in trajs.iter().flat_map(|t| &t.steps) {
            p_minus += proxy_no_risk_prob(&snapshot.safety_values(&s.state, &s.action)?, cfg.suppression.kappa)?;
            steps += 1;
        }
        let metrics = IterationMetrics {
            iter: self.iteration,
            task_return_mean: summary.return_mean,
            violations: summary.violations,
            p_minus_mean: p_minus / steps.max(1) as f64,
            recovery_fraction: summary.recovery_fraction,
            grad_norm_task: grad_task.norm(),
            grad_norm_recovery,
        };
        self.iteration += 1;
        Ok(metrics)
    }

    /// Rolls out the current policies (with the safety layer when the method has one).
    pub fn evaluate(&mut self, episodes: usize, seed: u64) -> Result<EvalSummary> {
        let epsilon = self.layer_epsilon();
        let layer = self.cfg.method.uses_safety_layer().then_some(SafetyLayer {
            critics: &self.critics,
            epsilon,
            recovery: &self.recovery_policy,
        });
        let trajs = collect_batch(
            &mut self.env,
            &self.task_policy,
            layer.as_ref(),
            self.cfg.horizon,
            derive_seed(seed, "eval"),
            0,
            episodes,
        )?;
        Ok(summarize(&trajs, self.env.constraint_count()))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.insert("task_policy", self.task_policy.params());
        ck.insert("recovery_policy", self.recovery_policy.params());
        ck.insert("critic.task", self.critics.task.params());
        for (i, c) in self.critics.safety.iter().enumerate() {
            ck.insert(&format!("critic.safety.{i}"), c.params());
        }
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.restore_into("task_policy", self.task_policy.params_mut())?;
        ck.restore_into("recovery_policy", self.recovery_policy.params_mut())?;
        ck.restore_into("critic.task", self.critics.task.params_mut())?;
        for (i, c) in self.critics.safety.iter_mut().enumerate() {
            ck.restore_into(&format!("critic.safety.{i}"), c.params_mut())?;
        }
        Ok(())
    }
}

/// Visited states paired with all actions weighted by `π(a|s)`, or with
/// `samples` draws from `π(s)` when actions cannot be enumerated.
pub fn action_batch<P, R>(
    policy: &P,
    trajectories: &[Trajectory<P::Obs, P::Action>],
    samples: usize,
    rng: &mut R,
) -> Result<Vec<Sample<P::Obs, P::Action>>>
where
    P: Policy,
    P::Obs: Clone,
    R: rand::Rng + ?Sized,
{
    let mut batch = Vec::new();
    for s in trajectories.iter().flat_map(|t| &t.steps) {
        match policy.enumerate_actions(&s.state)? {
            Some(actions) => batch.extend(actions.into_iter().map(|(a, p)| Sample {
                obs: s.state.clone(),
                action: a,
                weight: p,
            })),
            None => {
                for _ in 0..samples {
                    batch.push(Sample {
                        obs: s.state.clone(),
                        action: policy.sample(&s.state, rng)?,
                        weight: 1.0 / samples as f64,
                    });
                }
            }
        }
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(batch)
}

pub fn summarize<O, A>(trajs: &[Trajectory<O, A>], constraints: usize) -> EvalSummary {
    let n = trajs.len().max(1) as f64;
    let mut violations = vec![0.0; constraints];
    let mut recovery = 0usize;
    let mut steps = 0usize;
    for t in trajs {
        for (v, c) in violations.iter_mut().zip(t.violation_counts(constraints)) {
            *v += c as f64 / n;
        }
        recovery += t.steps.iter().filter(|s| s.layer == Layer::Recovery).count();
        steps += t.len();
    }
    EvalSummary {
        episodes: trajs.len(),
        return_mean: trajs.iter().map(|t| t.total_reward()).sum::<f64>() / n,
        violations,
        recovery_fraction: recovery as f64 / steps.max(1) as f64,
    }
}
