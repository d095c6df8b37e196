//! Score-function gradient estimators. Every estimator here has the form
//! `Σ_k w_k c_k ∇log π(a_k|s_k) / Σ_k w_k` and differs only in the
//! per-sample coefficient `c_k`.

use crate::approx::{CriticSet, ParamVector, Policy, QFunction};
use crate::error::{Error, Result};
use crate::mdp::{compute_risk_indicators, Trajectory};

use super::proxy::{proxy_no_risk_prob, proxy_risk_prob, SuppressionConfig};

/// A weighted state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<O, A> {
    pub obs: O,
    pub action: A,
    pub weight: f64,
}

/// A state-action pair with externally supplied risk probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchSample<O, A> {
    pub obs: O,
    pub action: A,
    pub weight: f64,
    pub p_minus: f64,
    pub p: Vec<f64>,
}

/// Executed steps of all trajectories, in order, with unit weight.
pub fn steps_as_batch<O: Clone, A: Clone>(trajectories: &[Trajectory<O, A>]) -> Vec<Sample<O, A>> {
    trajectories
        .iter()
        .flat_map(|t| t.steps.iter())
        .map(|s| Sample {
            obs: s.state.clone(),
            action: s.action.clone(),
            weight: 1.0,
        })
        .collect()
}

fn accumulate<P: Policy>(
    policy: &P,
    items: &[(&P::Obs, &P::Action, f64)],
    coefs: &mut [f64],
    normalize: bool,
) -> Result<ParamVector> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (_, _, w) in items {
        if !(*w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample weight {w}")));
        }
        total += w;
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("batch weights sum to zero".into()));
    }
    if coefs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("gradient coefficient"));
    }
    if normalize {
        let mean = items.iter().zip(coefs.iter()).map(|((_, _, w), c)| w * c).sum::<f64>() / total;
        coefs.iter_mut().for_each(|c| *c -= mean);
    }
    let mut grad = policy.params().zeros_like();
    for ((o, a, w), c) in items.iter().zip(coefs.iter()) {
        if *w == 0.0 {
            continue;
        }
        grad.add_scaled(&policy.log_prob_grad(o, a)?, w * c);
    }
    grad.scale(1.0 / total);
    grad.ensure_finite("policy gradient")?;
    Ok(grad)
}

/// Generic estimator with coefficient `coef(s, a)`.
pub fn score_gradient<P, F>(
    policy: &P,
    batch: &[Sample<P::Obs, P::Action>],
    mut coef: F,
    normalize: bool,
) -> Result<ParamVector>
where
    P: Policy,
    F: FnMut(&P::Obs, &P::Action) -> Result<f64>,
{
    let items: Vec<_> = batch.iter().map(|s| (&s.obs, &s.action, s.weight)).collect();
    let mut coefs = batch
        .iter()
        .map(|s| coef(&s.obs, &s.action))
        .collect::<Result<Vec<_>>>()?;
    accumulate(policy, &items, &mut coefs, normalize)
}

/// Unconstrained estimate with coefficient `Q_R`.
pub fn task_policy_gradient<P, Q>(
    policy: &P,
    batch: &[Sample<P::Obs, P::Action>],
    critics: &CriticSet<Q>,
    normalize: bool,
) -> Result<ParamVector>
where
    P: Policy,
    Q: QFunction<Obs = P::Obs, Action = P::Action>,
{
    score_gradient(policy, batch, |o, a| critics.task_value(o, a), normalize)
}

/// Suppression estimate with coefficient `p̃_- Q_R - Σ_i w_i p̃_i Q_{C_i}`.
pub fn suppression_gradient<P, Q>(
    policy: &P,
    batch: &[Sample<P::Obs, P::Action>],
    critics: &CriticSet<Q>,
    cfg: &SuppressionConfig,
) -> Result<ParamVector>
where
    P: Policy,
    Q: QFunction<Obs = P::Obs, Action = P::Action>,
{
    cfg.ensure_constraints(critics.constraint_count())?;
    score_gradient(
        policy,
        batch,
        |o, a| {
            let qr = critics.task_value(o, a)?;
            let qc = critics.safety_values(o, a)?;
            let p_minus = proxy_no_risk_prob(&qc, cfg.kappa)?;
            let mut c = p_minus * qr;
            for (q, w) in qc.iter().zip(&cfg.weights) {
                c -= w * proxy_risk_prob(*q, cfg.clamp_proxy)? * q;
            }
            Ok(c)
        },
        cfg.normalize_advantage,
    )
}

/// The same estimate written as `p̃_- (Q_R - Σ_i r_i Q_{C_i})`.
pub fn suppression_gradient_ratio_form<P, Q>(
    policy: &P,
    batch: &[Sample<P::Obs, P::Action>],
    critics: &CriticSet<Q>,
    cfg: &SuppressionConfig,
) -> Result<ParamVector>
where
    P: Policy,
    Q: QFunction<Obs = P::Obs, Action = P::Action>,
{
    cfg.ensure_constraints(critics.constraint_count())?;
    score_gradient(
        policy,
        batch,
        |o, a| {
            let qr = critics.task_value(o, a)?;
            let qc = critics.safety_values(o, a)?;
            let p_minus = proxy_no_risk_prob(&qc, cfg.kappa)?;
            let r = super::proxy::suppression_weights(&qc, cfg)?;
            let penalty: f64 = r.iter().zip(&qc).map(|(r, q)| r * q).sum();
            Ok(p_minus * (qr - penalty))
        },
        cfg.normalize_advantage,
    )
}

/// Penalized estimate with coefficient `Q_R - Σ_i w_i Q_{C_i}`.
pub fn reward_penalty_gradient<P, Q>(
    policy: &P,
    batch: &[Sample<P::Obs, P::Action>],
    critics: &CriticSet<Q>,
    weights: &[f64],
    normalize: bool,
) -> Result<ParamVector>
where
    P: Policy,
    Q: QFunction<Obs = P::Obs, Action = P::Action>,
{
    critics.ensure_constraints(weights.len())?;
    score_gradient(
        policy,
        batch,
        |o, a| {
            let qr = critics.task_value(o, a)?;
            let qc = critics.safety_values(o, a)?;
            Ok(qr - qc.iter().zip(weights).map(|(q, w)| w * q).sum::<f64>())
        },
        normalize,
    )
}

/// Hindsight estimate over executed steps with coefficient
/// `χ̄_t Q_R - Σ_i w_i χ_{i,t} Q_{C_i}`.
pub fn hard_switch_gradient<P, Q>(
    policy: &P,
    trajectories: &[Trajectory<P::Obs, P::Action>],
    critics: &CriticSet<Q>,
    weights: &[f64],
    normalize: bool,
) -> Result<ParamVector>
where
    P: Policy,
    Q: QFunction<Obs = P::Obs, Action = P::Action>,
{
    critics.ensure_constraints(weights.len())?;
    let mut items = Vec::new();
    let mut coefs = Vec::new();
    for traj in trajectories {
        if traj.is_empty() {
            continue;
        }
        if traj.constraint_count() != weights.len() {
            return Err(Error::ConstraintCount {
                expected: weights.len(),
                got: traj.constraint_count(),
            });
        }
        let ind = compute_risk_indicators(traj)?;
        for (t, step) in traj.steps.iter().enumerate() {
            let qr = critics.task_value(&step.state, &step.action)?;
            let qc = critics.safety_values(&step.state, &step.action)?;
            let mut c = f64::from(ind.chi_bar[t]) * qr;
            for ((q, w), chi) in qc.iter().zip(weights).zip(&ind.chi[t]) {
                c -= w * f64::from(*chi) * q;
            }
            items.push((&step.state, &step.action, 1.0));
            coefs.push(c);
        }
    }
    accumulate(policy, &items, &mut coefs, normalize)
}

/// Switch estimate with given probabilities: `p_- Q_R - Σ_i w_i p_i Q_{C_i}`.
pub fn soft_switch_gradient<P, Q>(
    policy: &P,
    samples: &[SwitchSample<P::Obs, P::Action>],
    critics: &CriticSet<Q>,
    weights: &[f64],
) -> Result<ParamVector>
where
    P: Policy,
    Q: QFunction<Obs = P::Obs, Action = P::Action>,
{
    critics.ensure_constraints(weights.len())?;
    let items: Vec<_> = samples.iter().map(|s| (&s.obs, &s.action, s.weight)).collect();
    let mut coefs = Vec::with_capacity(samples.len());
    for s in samples {
        if s.p.len() != weights.len() {
            return Err(Error::ConstraintCount {
                expected: weights.len(),
                got: s.p.len(),
            });
        }
        let qr = critics.task_value(&s.obs, &s.action)?;
        let qc = critics.safety_values(&s.obs, &s.action)?;
        let mut c = s.p_minus * qr;
        for ((q, w), p) in qc.iter().zip(weights).zip(&s.p) {
            c -= w * p * q;
        }
        coefs.push(c);
    }
    accumulate(policy, &items, &mut coefs, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{TabularQ, TabularSoftmax};
    use crate::mdp::{Layer, Step};
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_setup(seed: u64, zero_safety: bool) -> (TabularSoftmax, CriticSet<TabularQ>, Vec<Sample<usize, usize>>) {
        let mut rng = rng_from_seed(seed);
        let (s, a) = (5, 3);
        let logits = (0..s * a).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let pi = TabularSoftmax::from_logits(s, a, logits).unwrap();
        let table = |rng: &mut crate::seed::Rng, scale: f64| {
            TabularQ::from_table(s, a, (0..s * a).map(|_| rng.random::<f64>() * scale).collect()).unwrap()
        };
        let task = table(&mut rng, 4.0);
        let safety = if zero_safety {
            vec![TabularQ::new(s, a), TabularQ::new(s, a)]
        } else {
            vec![table(&mut rng, 1.5), table(&mut rng, 0.8)]
        };
        let batch = (0..40)
            .map(|_| Sample {
                obs: rng.random_range(0..s),
                action: rng.random_range(0..a),
                weight: 1.0,
            })
            .collect();
        (pi, CriticSet::new(task, safety), batch)
    }

    fn flag_free(batch: &[Sample<usize, usize>]) -> Vec<Trajectory<usize, usize>> {
        vec![Trajectory {
            seed: 0,
            terminal: false,
            steps: batch
                .iter()
                .map(|s| Step {
                    state: s.obs,
                    action: s.action,
                    next_state: 0,
                    task_reward: 0.0,
                    constraint_flags: vec![0, 0],
                    log_prob: 0.0,
                    layer: Layer::Task,
                })
                .collect(),
        }]
    }

    #[test]
    fn zero_safety_critics_reduce_to_task_gradient() {
        let (pi, critics, batch) = random_setup(1, true);
        let cfg = SuppressionConfig::new(1.0, vec![1.0, 3.0]);
        let g = task_policy_gradient(&pi, &batch, &critics, false).unwrap();
        let s = suppression_gradient(&pi, &batch, &critics, &cfg).unwrap();
        let r = reward_penalty_gradient(&pi, &batch, &critics, &cfg.weights, false).unwrap();
        let h = hard_switch_gradient(&pi, &flag_free(&batch), &critics, &cfg.weights, false).unwrap();
        assert!(g.max_abs_diff(&s) <= 1e-12);
        assert!(g.max_abs_diff(&r) <= 1e-12);
        assert!(g.max_abs_diff(&h) <= 1e-12);
    }

    #[test]
    fn ratio_form_matches() {
        let (pi, critics, batch) = random_setup(2, false);
        let cfg = SuppressionConfig::new(2.0, vec![1.0, 0.5]);
        let a = suppression_gradient(&pi, &batch, &critics, &cfg).unwrap();
        let b = suppression_gradient_ratio_form(&pi, &batch, &critics, &cfg).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn high_risk_on_all_constraints_suppresses_task_term() {
        let (pi, mut critics, batch) = random_setup(3, false);
        let n = critics.task.table().len();
        for c in &mut critics.safety {
            *c = TabularQ::from_table(5, 3, vec![20.0; n]).unwrap();
        }
        let cfg = SuppressionConfig::new(1.0, vec![1.0, 1.0]);
        let s = suppression_gradient(&pi, &batch, &critics, &cfg).unwrap();
        // with uniform Q_C the penalty is constant, so only p̃_- Q_R could move the policy
        let g = task_policy_gradient(&pi, &batch, &critics, false).unwrap();
        let pen = score_gradient(&pi, &batch, |_, _| Ok(-40.0), false).unwrap();
        let mut diff = s.clone();
        diff.add_scaled(&pen, -1.0);
        assert!(diff.norm() <= (-40.0f64).exp() * g.norm() * 1.0001 + 1e-15);
    }

    #[test]
    fn hard_switch_examples() {
        let pi = TabularSoftmax::new(2, 2);
        let critics = CriticSet::new(
            TabularQ::from_table(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![TabularQ::from_table(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap()],
        );
        // flag at step 1: chi = [1, 0], so step 0 carries only the penalty
        let traj = Trajectory {
            seed: 0,
            terminal: true,
            steps: vec![
                Step {
                    state: 0,
                    action: 0,
                    next_state: 1,
                    task_reward: 0.0,
                    constraint_flags: vec![0],
                    log_prob: 0.0,
                    layer: Layer::Task,
                },
                Step {
                    state: 1,
                    action: 1,
                    next_state: 1,
                    task_reward: 0.0,
                    constraint_flags: vec![1],
                    log_prob: 0.0,
                    layer: Layer::Task,
                },
            ],
        };
        let h = hard_switch_gradient(&pi, std::slice::from_ref(&traj), &critics, &[2.0], false).unwrap();
        let mut expect = pi.log_prob_grad(&0, &0).unwrap();
        expect.scale(-1.0);
        expect.add_scaled(&pi.log_prob_grad(&1, &1).unwrap(), 4.0);
        expect.scale(0.5);
        assert!(h.max_abs_diff(&expect) < 1e-15);
        assert!(matches!(
            hard_switch_gradient(&pi, &[traj], &critics, &[1.0, 1.0], false),
            Err(Error::ConstraintCount { .. })
        ));
    }

    #[test]
    fn empty_and_zero_weight_batches() {
        let (pi, critics, _) = random_setup(4, false);
        assert_eq!(task_policy_gradient(&pi, &[], &critics, false), Err(Error::EmptyBatch));
        let b = vec![Sample {
            obs: 0,
            action: 0,
            weight: 0.0,
        }];
        assert!(task_policy_gradient(&pi, &b, &critics, false).is_err());
    }

    #[test]
    fn mismatched_weights() {
        let (pi, critics, batch) = random_setup(5, false);
        let cfg = SuppressionConfig::new(1.0, vec![1.0]);
        assert!(matches!(
            suppression_gradient(&pi, &batch, &critics, &cfg),
            Err(Error::ConstraintCount { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn normalization_removes_constant_shift() {
        let (pi, critics, batch) = random_setup(6, false);
        let a = score_gradient(&pi, &batch, |o, a| critics.task_value(o, a), true).unwrap();
        let b = score_gradient(&pi, &batch, |o, a| Ok(critics.task_value(o, a)? + 7.0), true).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    proptest! {
        #[test]
        fn soft_switch_with_unit_no_risk_matches_penalty(seed in 0u64..1000) {
            let (pi, critics, batch) = random_setup(seed, false);
            let w = [0.7, 1.9];
            let samples: Vec<_> = batch.iter().map(|s| SwitchSample {
                obs: s.obs, action: s.action, weight: s.weight, p_minus: 1.0, p: vec![1.0, 1.0],
            }).collect();
            let soft = soft_switch_gradient(&pi, &samples, &critics, &w).unwrap();
            let pen = reward_penalty_gradient(&pi, &batch, &critics, &w, false).unwrap();
            prop_assert!(soft.max_abs_diff(&pen) < 1e-12);
        }
    }
}
