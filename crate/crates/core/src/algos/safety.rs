//! Safety layer and recovery-policy training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{CriticSet, Optimizer, ParamVector, Policy, QFunction};
use crate::error::{Error, Result};
use crate::mdp::Layer;

use super::gradients::{score_gradient, Sample};
use super::proxy::{proxy_no_risk_prob, proxy_risk_prob};

/// Snapshot of the critics and recovery policy used to filter actions.
#[derive(Debug, Clone)]
pub struct SafetyLayer<'a, P, Q> {
    pub critics: &'a CriticSet<Q>,
    /// Per-constraint thresholds.
    pub epsilon: Vec<f64>,
    pub recovery: &'a P,
}

/// Proposes `ã ~ π(s)`; keeps it when every clamped `Q_{C_i}(s, ã) <= ε_i`,
/// otherwise executes a recovery action.
pub fn safety_layer_select<P, Q, R>(
    obs: &P::Obs,
    task_policy: &P,
    layer: &SafetyLayer<'_, P, Q>,
    rng: &mut R,
) -> Result<(P::Action, Layer)>
where
    P: Policy,
    Q: QFunction<Obs = P::Obs, Action = P::Action>,
    R: Rng + ?Sized,
{
    layer.critics.ensure_constraints(layer.epsilon.len())?;
    let proposed = task_policy.sample(obs, rng)?;
    let q = layer.critics.safety_values(obs, &proposed)?;
    if q.iter().zip(&layer.epsilon).all(|(q, e)| q <= e) {
        Ok((proposed, Layer::Task))
    } else {
        Ok((layer.recovery.sample(obs, rng)?, Layer::Recovery))
    }
}

/// Objective of the recovery policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryConfig {
    /// Per-constraint weights of the recovery cost.
    pub weights: Vec<f64>,
    /// Scale each `Q_{C_i}` by its risk proxy `p̃_i`.
    #[serde(default)]
    pub suppression_weighted: bool,
    /// Add the suppressed task term `p̃_- Q_R`.
    #[serde(default)]
    pub include_task_term: bool,
    pub kappa: f64,
    pub lr: f64,
    #[serde(default)]
    pub normalize_advantage: bool,
}

/// Ascent direction for the recovery policy: coefficient
/// `[p̃_- Q_R] - Σ_i w_i m_i Q_{C_i}` with `m_i = p̃_i` or `1`.
pub fn recovery_gradient<P, Q>(
    recovery: &P,
    batch: &[Sample<P::Obs, P::Action>],
    critics: &CriticSet<Q>,
    cfg: &RecoveryConfig,
) -> Result<ParamVector>
where
    P: Policy,
    Q: QFunction<Obs = P::Obs, Action = P::Action>,
{
    critics.ensure_constraints(cfg.weights.len())?;
    score_gradient(
        recovery,
        batch,
        |o, a| {
            let qc = critics.safety_values(o, a)?;
            let mut c = 0.0;
            if cfg.include_task_term {
                c += proxy_no_risk_prob(&qc, cfg.kappa)? * critics.task_value(o, a)?;
            }
            for (q, w) in qc.iter().zip(&cfg.weights) {
                let m = if cfg.suppression_weighted {
                    proxy_risk_prob(*q, true)?
                } else {
                    1.0
                };
                c -= w * m * q;
            }
            Ok(c)
        },
        cfg.normalize_advantage,
    )
}

/// One recovery-policy update; returns the gradient that was applied.
pub fn train_recovery_policy<P, Q>(
    recovery: &mut P,
    optimizer: &mut Optimizer,
    batch: &[Sample<P::Obs, P::Action>],
    critics: &CriticSet<Q>,
    cfg: &RecoveryConfig,
) -> Result<ParamVector>
where
    P: Policy,
    Q: QFunction<Obs = P::Obs, Action = P::Action>,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let grad = recovery_gradient(recovery, batch, critics, cfg)?;
    optimizer.step(recovery.params_mut(), &grad);
    recovery.params().ensure_finite("recovery policy parameters")?;
    Ok(grad)
}
