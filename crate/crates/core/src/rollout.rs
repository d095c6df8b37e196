//! Trajectory collection.

use crate::algos::{safety_layer_select, SafetyLayer};
use crate::approx::{Policy, QFunction};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::mdp::{Layer, Step, Trajectory};
use crate::seed::{derive_indexed, derive_seed, rng_from_seed};

/// Rolls out one episode of at most `horizon` steps.
///
/// With a safety layer, each step first proposes an action from `policy` and
/// defers to the layer's recovery policy when a safety critic exceeds its
/// threshold. The episode is a pure function of `seed`.
pub fn sample_trajectory<E, P, Q>(
    env: &mut E,
    policy: &P,
    safety_layer: Option<&SafetyLayer<'_, P, Q>>,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory<E::Obs, E::Action>>
where
    E: Environment,
    P: Policy<Obs = E::Obs, Action = E::Action>,
    Q: QFunction<Obs = E::Obs, Action = E::Action>,
{
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut obs = env.reset(derive_seed(seed, "env"));
    let mut rng = rng_from_seed(derive_seed(seed, "policy"));
    let n = env.constraint_count();
    let mut steps = Vec::with_capacity(horizon.min(4096));
    let mut terminal = false;
    for t in 0..horizon {
        let (action, layer) = match safety_layer {
            Some(layer) => safety_layer_select(&obs, policy, layer, &mut rng)?,
            None => (policy.sample(&obs, &mut rng)?, Layer::Task),
        };
        let log_prob = match (layer, safety_layer) {
            (Layer::Recovery, Some(l)) => l.recovery.log_prob(&obs, &action)?,
            _ => policy.log_prob(&obs, &action)?,
        };
        let out = env.step(&action).map_err(|e| Error::EnvStep {
            step: t,
            message: e.to_string(),
        })?;
        if out.flags.len() != n {
            return Err(Error::EnvStep {
                step: t,
                message: format!("expected {n} constraint flags, got {}", out.flags.len()),
            });
        }
        steps.push(Step {
            state: obs,
            action,
            next_state: out.obs.clone(),
            task_reward: out.reward,
            constraint_flags: out.flags,
            log_prob,
            layer,
        });
        obs = out.obs;
        if out.done {
            terminal = true;
            break;
        }
        if out.truncated {
            break;
        }
    }
    Ok(Trajectory { seed, steps, terminal })
}

/// Collects `count` episodes with seeds derived from `(master, index)`.
/// Episodes are independent, so the result does not depend on evaluation order.
pub fn collect_batch<E, P, Q>(
    env: &mut E,
    policy: &P,
    safety_layer: Option<&SafetyLayer<'_, P, Q>>,
    horizon: usize,
    master: u64,
    first_index: u64,
    count: usize,
) -> Result<Vec<Trajectory<E::Obs, E::Action>>>
where
    E: Environment,
    P: Policy<Obs = E::Obs, Action = E::Action>,
    Q: QFunction<Obs = E::Obs, Action = E::Action>,
{
    (0..count as u64)
        .map(|k| {
            let seed = derive_indexed(master, "episode", first_index + k);
            sample_trajectory(env, policy, safety_layer, horizon, seed)
        })
        .collect()
}
