//! Oracle-versus-estimator property checks on enumerable CMDPs.
//!
//! Each check returns a measured error; callers decide the tolerance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dual_update, enumerate_risk_probabilities, enumerate_trajectories, exact_objective, occupancy_measure};
use super::{evaluate_probs, occupancy_with_discount, policy_table, state_action_marginals, DualTable};
use crate::algos::{
    hard_switch_gradient, reward_penalty_gradient, soft_switch_gradient, steps_as_batch, suppression_gradient,
    suppression_gradient_ratio_form, task_policy_gradient, SafetyLayer, Sample, SuppressionConfig, SwitchSample,
};
use crate::approx::{CriticSet, ParamVector, Policy, TabularQ, TabularSoftmax};
use crate::envs::TabularEnv;
use crate::error::{Error, Result};
use crate::mdp::{Channel, CmdpSpec, ConstraintSpec, RiskConvention, Trajectory};
use crate::rollout::sample_trajectory;
use crate::seed::{derive_indexed, rng_from_seed};

/// One named property with its measured error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyReport {
    /// Passes when `error < tolerance`; a non-finite error fails.
    pub fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            error,
            tolerance,
            passed: error < tolerance,
        }
    }
}

/// Dense random CMDP with two constraints (`γ = 0.9`, `γ_C = 0.85, 0.7`).
pub fn random_cmdp(seed: u64, states: usize, actions: usize) -> CmdpSpec {
    let (ns, na) = (states, actions);
    let mut rng = rng_from_seed(seed);
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let row: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() + 0.05).collect();
        let z: f64 = row.iter().sum();
        transition.extend(row.iter().map(|p| p / z));
    }
    let reward = (0..ns * na * ns).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
    let flags = |rng: &mut crate::seed::Rng| (0..ns).map(|_| u8::from(rng.random::<f64>() < 0.35)).collect();
    let mut mu: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() + 0.1).collect();
    let z: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|m| *m /= z);
    let f0 = flags(&mut rng);
    let f1 = flags(&mut rng);
    CmdpSpec {
        state_count: ns,
        action_count: na,
        transition,
        reward,
        gamma: 0.9,
        constraints: vec![
            ConstraintSpec::new("c0", f0, 0.85, 1.0),
            ConstraintSpec::new("c1", f1, 0.7, 1.0),
        ],
        epsilon: 0.1,
        initial_dist: mu,
    }
}

/// Softmax policy with logits uniform in `[-1, 1)`.
pub fn random_tabular_policy(seed: u64, states: usize, actions: usize) -> TabularSoftmax {
    let mut rng = rng_from_seed(seed);
    let logits = (0..states * actions).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    TabularSoftmax::from_logits(states, actions, logits).expect("logit count matches the table")
}

/// Task critic uniform in `[-1, 2)`, safety critics uniform in `[0, safety_scale)`.
pub fn random_critics(
    seed: u64,
    states: usize,
    actions: usize,
    constraints: usize,
    safety_scale: f64,
) -> CriticSet<TabularQ> {
    let mut rng = rng_from_seed(seed);
    let n = states * actions;
    let mut table = |lo: f64, hi: f64| -> TabularQ {
        let t = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
        TabularQ::from_table(states, actions, t).expect("table size matches")
    };
    let task = table(-1.0, 2.0);
    let safety = (0..constraints).map(|_| table(0.0, safety_scale)).collect();
    CriticSet::new(task, safety)
}

/// Exact `Q_R` and `Q_{C_i}` of `policy` packed as tabular critics.
pub fn oracle_critics(spec: &CmdpSpec, policy: &TabularSoftmax) -> Result<CriticSet<TabularQ>> {
    let probs = policy_table(spec, policy)?;
    let (ns, na) = (spec.state_count, spec.action_count);
    let q = |ch| -> Result<TabularQ> { TabularQ::from_table(ns, na, evaluate_probs(spec, &probs, ch)?.q) };
    let task = q(Channel::Task)?;
    let safety = (0..spec.constraint_count())
        .map(|i| q(Channel::Constraint(i)))
        .collect::<Result<_>>()?;
    Ok(CriticSet::new(task, safety))
}

/// State-action samples with random positive weights.
pub fn random_batch(seed: u64, states: usize, actions: usize, size: usize) -> Vec<Sample<usize, usize>> {
    let mut rng = rng_from_seed(seed);
    (0..size)
        .map(|_| Sample {
            obs: rng.random_range(0..states),
            action: rng.random_range(0..actions),
            weight: rng.random::<f64>() + 0.01,
        })
        .collect()
}

/// Monte-Carlo episodes of fixed length from `spec` under `policy`.
pub fn sample_trajectories(
    spec: &CmdpSpec,
    policy: &TabularSoftmax,
    count: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory<usize, usize>>> {
    let mut env = TabularEnv::new(spec.clone(), vec![false; spec.state_count], horizon)?;
    (0..count)
        .map(|k| {
            sample_trajectory(
                &mut env,
                policy,
                None::<&SafetyLayer<'_, TabularSoftmax, TabularQ>>,
                horizon,
                derive_indexed(seed, "episode", k as u64),
            )
        })
        .collect()
}

/// Largest deviation of the suppression, hard-switch and reward-penalty
/// gradients from the task gradient on one shared batch.
///
/// The batch is drawn from `spec` and its constraint flags are cleared, so the
/// hard-switch indicators are risk-free; with zero safety critics the error is
/// exactly zero.
pub fn reduction_error(
    spec: &CmdpSpec,
    policy: &TabularSoftmax,
    critics: &CriticSet<TabularQ>,
    cfg: &SuppressionConfig,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    let mut trajs = sample_trajectories(spec, policy, episodes, horizon, seed)?;
    for step in trajs.iter_mut().flat_map(|t| t.steps.iter_mut()) {
        step.constraint_flags.iter_mut().for_each(|f| *f = 0);
    }
    let batch = steps_as_batch(&trajs);
    let base = task_policy_gradient(policy, &batch, critics, false)?;
    let others = [
        suppression_gradient(policy, &batch, critics, cfg)?,
        hard_switch_gradient(policy, &trajs, critics, &cfg.weights, false)?,
        reward_penalty_gradient(policy, &batch, critics, &cfg.weights, false)?,
    ];
    Ok(others.iter().map(|g| g.max_abs_diff(&base)).fold(0.0, f64::max))
}

/// Componentwise gap between the direct suppression gradient and its ratio form.
pub fn rewrite_error<P, Q>(
    policy: &P,
    batch: &[Sample<P::Obs, P::Action>],
    critics: &CriticSet<Q>,
    cfg: &SuppressionConfig,
) -> Result<f64>
where
    P: Policy,
    Q: crate::approx::QFunction<Obs = P::Obs, Action = P::Action>,
{
    let a = suppression_gradient(policy, batch, critics, cfg)?;
    let b = suppression_gradient_ratio_form(policy, batch, critics, cfg)?;
    Ok(a.max_abs_diff(&b))
}

/// Sup-norm gap between the exact expectation of the hard-switch estimator
/// over all length-`horizon` trajectories and the soft-switch expression with
/// exact risk probabilities for the remaining window of each step.
pub fn tower_gap(
    spec: &CmdpSpec,
    policy: &TabularSoftmax,
    critics: &CriticSet<TabularQ>,
    weights: &[f64],
    horizon: usize,
) -> Result<f64> {
    let mut hard = policy.params().zeros_like();
    for (traj, prob) in enumerate_trajectories(spec, policy, horizon)? {
        let g = hard_switch_gradient(policy, std::slice::from_ref(&traj), critics, weights, false)?;
        hard.add_scaled(&g, prob);
    }
    let marginals = state_action_marginals(spec, policy, horizon)?;
    let na = spec.action_count;
    let mut samples = Vec::new();
    for (t, m) in marginals.iter().enumerate() {
        let risk = enumerate_risk_probabilities(spec, policy, horizon - 1 - t, RiskConvention::StrictlyAfter)?;
        for (k, &mass) in m.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            samples.push(SwitchSample {
                obs: k / na,
                action: k % na,
                weight: mass / horizon as f64,
                p_minus: risk.p_minus[k],
                p: risk.p.iter().map(|p| p[k]).collect(),
            });
        }
    }
    let soft = soft_switch_gradient(policy, &samples, critics, weights)?;
    Ok(hard.max_abs_diff(&soft))
}

fn relative_error(estimate: &ParamVector, reference: &ParamVector) -> f64 {
    let mut diff = estimate.clone();
    diff.add_scaled(reference, -1.0);
    diff.norm() / reference.norm().max(1e-12)
}

/// Relative error of the sample-form policy-gradient estimator, fed the full
/// discounted occupancy and exact critics, against central finite differences
/// of the exact objective. Returns one error per channel (task first).
pub fn policy_gradient_errors(spec: &CmdpSpec, policy: &TabularSoftmax, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step}")));
    }
    let probs = policy_table(spec, policy)?;
    let (ns, na) = (spec.state_count, spec.action_count);
    let channels = std::iter::once(Channel::Task).chain((0..spec.constraint_count()).map(Channel::Constraint));
    let mut out = Vec::new();
    for ch in channels {
        let discount = spec.discount(ch)?;
        let occ = occupancy_with_discount(spec, &probs, discount)?;
        let q = TabularQ::from_table(ns, na, evaluate_probs(spec, &probs, ch)?.q)?;
        let critics = CriticSet::new(q, Vec::new());
        let batch: Vec<_> = (0..ns * na)
            .map(|k| Sample {
                obs: k / na,
                action: k % na,
                weight: occ.d[k],
            })
            .collect();
        let mut estimate = task_policy_gradient(policy, &batch, &critics, false)?;
        estimate.scale(1.0 / (1.0 - discount));
        let mut fd = policy.params().zeros_like();
        let mut probe = policy.clone();
        for j in 0..fd.len() {
            let x = policy.params().values[j];
            probe.params_mut().values[j] = x + step;
            let up = exact_objective(spec, &probe, ch)?;
            probe.params_mut().values[j] = x - step;
            let down = exact_objective(spec, &probe, ch)?;
            probe.params_mut().values[j] = x;
            fd.values[j] = (up - down) / (2.0 * step);
        }
        out.push(relative_error(&estimate, &fd));
    }
    Ok(out)
}

/// Upper and product bounds of the exact no-risk probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyBoundReport {
    pub cells: usize,
    /// Pairs where `p_- > min_i (1 - p_i)` beyond rounding.
    pub upper_violations: usize,
    pub upper_bound_excess: f64,
    /// Largest `Π_i (1 - p_i) - p_-`; positive where the product bound fails.
    pub product_bound_gap: f64,
}

pub fn proxy_bound(spec: &CmdpSpec, policy: &TabularSoftmax, horizon: usize) -> Result<ProxyBoundReport> {
    let t = enumerate_risk_probabilities(spec, policy, horizon, RiskConvention::StrictlyAfter)?;
    let cells = t.p_minus.len();
    let upper_violations = (0..cells)
        .filter(|&k| {
            let bound = t.p.iter().map(|p| 1.0 - p[k]).fold(1.0, f64::min);
            t.p_minus[k] > bound + 1e-12
        })
        .count();
    Ok(ProxyBoundReport {
        cells,
        upper_violations,
        upper_bound_excess: t.upper_bound_excess(),
        product_bound_gap: t.product_bound_gap(),
    })
}

/// Outcome of one projected dual step from random multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    pub epsilon: f64,
    /// Cells with positive occupancy and `Q_C > ε`.
    pub violating_cells: usize,
    pub increased_cells: usize,
    /// Cells whose "strictly increased" status differs from "violating".
    pub mismatches: usize,
    pub min_lambda: f64,
}

/// Applies one dual step with `ε` at the median exact constraint value, so both
/// violating and satisfied cells occur, starting from multipliers of which
/// about half are zero.
pub fn dual_monotonicity(spec: &CmdpSpec, policy: &TabularSoftmax, step: f64, seed: u64) -> Result<DualReport> {
    let critics = oracle_critics(spec, policy)?;
    let q_c: Vec<Vec<f64>> = critics.safety.iter().map(|c| c.table().to_vec()).collect();
    let occ = occupancy_measure(spec, policy)?;
    let mut all: Vec<f64> = q_c.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let epsilon = all.get(all.len() / 2).copied().unwrap_or(0.0);
    let (ns, na) = (spec.state_count, spec.action_count);
    let mut dual = DualTable::zeros(q_c.len(), ns, na);
    let mut rng = rng_from_seed(seed);
    for l in dual.lambda.iter_mut().flatten() {
        if rng.random::<f64>() < 0.5 {
            *l = rng.random::<f64>();
        }
    }
    let next = dual_update(&dual, &q_c, &occ, epsilon, step)?;
    let mut report = DualReport {
        epsilon,
        violating_cells: 0,
        increased_cells: 0,
        mismatches: 0,
        min_lambda: f64::INFINITY,
    };
    for i in 0..q_c.len() {
        for k in 0..ns * na {
            let violating = occ.d[k] > 0.0 && q_c[i][k] > epsilon;
            let increased = next.lambda[i][k] > dual.lambda[i][k];
            report.violating_cells += usize::from(violating);
            report.increased_cells += usize::from(increased);
            report.mismatches += usize::from(violating != increased);
            report.min_lambda = report.min_lambda.min(next.lambda[i][k]);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_is_exact_with_zero_safety_critics() {
        let spec = random_cmdp(3, 4, 3);
        let pi = random_tabular_policy(4, 4, 3);
        let mut critics = random_critics(5, 4, 3, 2, 1.0);
        critics.safety = vec![TabularQ::new(4, 3); 2];
        let cfg = SuppressionConfig::new(3.0, vec![0.5, 2.0]);
        let err = reduction_error(&spec, &pi, &critics, &cfg, 5, 6, 9).unwrap();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn corrupted_critic_breaks_reduction() {
        let spec = random_cmdp(3, 4, 3);
        let pi = random_tabular_policy(4, 4, 3);
        let critics = random_critics(5, 4, 3, 2, 1.0);
        let cfg = SuppressionConfig::new(3.0, vec![0.5, 2.0]);
        assert!(reduction_error(&spec, &pi, &critics, &cfg, 5, 6, 9).unwrap() > 1e-3);
    }

    #[test]
    fn tower_gap_vanishes_on_small_mdp() {
        let spec = random_cmdp(11, 3, 2);
        let pi = random_tabular_policy(12, 3, 2);
        let critics = random_critics(13, 3, 2, 2, 1.5);
        let gap = tower_gap(&spec, &pi, &critics, &[0.7, 1.3], 4).unwrap();
        assert!(gap < 1e-10, "{gap}");
    }

    #[test]
    fn tower_gap_holds_across_horizons_and_windows_differ() {
        let spec = random_cmdp(11, 3, 2);
        let pi = random_tabular_policy(12, 3, 2);
        let critics = random_critics(13, 3, 2, 2, 1.5);
        let exact = tower_gap(&spec, &pi, &critics, &[0.7, 1.3], 4).unwrap();
        let longer = tower_gap(&spec, &pi, &critics, &[0.7, 1.3], 5).unwrap();
        assert!(exact < 1e-10 && longer < 1e-10);
        let risk = enumerate_risk_probabilities(&spec, &pi, 3, RiskConvention::StrictlyAfter).unwrap();
        let other = enumerate_risk_probabilities(&spec, &pi, 1, RiskConvention::StrictlyAfter).unwrap();
        assert!(risk
            .p_minus
            .iter()
            .zip(&other.p_minus)
            .any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let spec = random_cmdp(21, 3, 2);
        let pi = random_tabular_policy(22, 3, 2);
        let errs = policy_gradient_errors(&spec, &pi, 1e-5).unwrap();
        assert_eq!(errs.len(), 3);
        assert!(errs.iter().all(|e| *e < 1e-6), "{errs:?}");
    }

    #[test]
    fn proxy_upper_bound_holds() {
        let spec = random_cmdp(31, 3, 2);
        let r = proxy_bound(&spec, &random_tabular_policy(32, 3, 2), 4).unwrap();
        assert_eq!(r.cells, 6);
        assert_eq!(r.upper_violations, 0);
        assert!(r.upper_bound_excess <= 1e-12);
    }

    #[test]
    fn dual_step_increases_exactly_violating_cells() {
        let spec = random_cmdp(41, 4, 2);
        let r = dual_monotonicity(&spec, &random_tabular_policy(42, 4, 2), 0.5, 43).unwrap();
        assert_eq!(r.mismatches, 0);
        assert!(r.violating_cells > 0 && r.violating_cells < 16);
        assert!(r.min_lambda >= 0.0);
    }

    #[test]
    fn random_batches_are_deterministic() {
        assert_eq!(random_batch(1, 3, 2, 10), random_batch(1, 3, 2, 10));
        assert_ne!(random_batch(1, 3, 2, 10), random_batch(2, 3, 2, 10));
    }
}
