//! State-dependent Lagrange multipliers and the tabular primal-dual solver.

use serde::{Deserialize, Serialize};

use super::{evaluate_probs, exact_policy_gradient_with, occupancy_with_discount, policy_table, Occupancy};
use crate::approx::{Policy, TabularSoftmax};
use crate::error::{Error, Result};
use crate::mdp::{Channel, CmdpSpec};

/// `lambda[i][s * A + a] >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTable {
    pub states: usize,
    pub actions: usize,
    pub lambda: Vec<Vec<f64>>,
}

impl DualTable {
    pub fn zeros(constraints: usize, states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            lambda: vec![vec![0.0; states * actions]; constraints],
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        self.lambda
            .iter()
            .map(|l| l.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }
}

/// Projected ascent `λ_i(s,a) ← max(0, λ_i(s,a) + step·d(s,a)·(Q_{C_i}(s,a) − ε))`.
pub fn dual_update(
    dual: &DualTable,
    q_c: &[Vec<f64>],
    occupancy: &Occupancy,
    epsilon: f64,
    step: f64,
) -> Result<DualTable> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("dual step {step} must be positive")));
    }
    let cells = dual.states * dual.actions;
    if q_c.len() != dual.lambda.len() {
        return Err(Error::Shape(format!(
            "{} critic tables for {} multipliers",
            q_c.len(),
            dual.lambda.len()
        )));
    }
    if occupancy.d.len() != cells || q_c.iter().any(|q| q.len() != cells) {
        return Err(Error::Shape("dual table, critics and occupancy disagree".into()));
    }
    let mut out = dual.clone();
    for (lam, q) in out.lambda.iter_mut().zip(q_c) {
        for ((l, q), d) in lam.iter_mut().zip(q).zip(&occupancy.d) {
            *l = (*l + step * d * (q - epsilon)).max(0.0);
        }
    }
    Ok(out)
}

/// Per constraint, `max (Q_{C_i}(s,a) − ε)` over pairs with `d(s,a) > tolerance`.
pub fn max_violation(q_c: &[Vec<f64>], occupancy: &Occupancy, epsilon: f64, tolerance: f64) -> Vec<f64> {
    q_c.iter()
        .map(|q| {
            q.iter()
                .zip(&occupancy.d)
                .filter(|(_, d)| **d > tolerance)
                .map(|(q, _)| q - epsilon)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalDualConfig {
    pub iterations: usize,
    pub policy_lr: f64,
    pub dual_lr: f64,
    /// Pairs with occupancy at or below this count as unvisited.
    pub support_tolerance: f64,
    /// Keep `λ ≡ 0`, giving plain exact task-gradient ascent.
    #[serde(default)]
    pub freeze_dual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub j_r: f64,
    pub max_violation: Vec<f64>,
    pub lambda_norm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualResult {
    pub policy: TabularSoftmax,
    pub dual: DualTable,
    pub trace: Vec<TraceRow>,
}

/// Alternates exact ascent on `E_d[Q_R − Σ_i λ_i (Q_{C_i} − ε)]` (semi-gradient in
/// the critics) with [`dual_update`]. The trace row of iteration `k` describes the
/// policy before its `k`-th update; a final row describes the returned policy.
pub fn primal_dual_solve(
    spec: &CmdpSpec,
    init: TabularSoftmax,
    epsilon: f64,
    cfg: &PrimalDualConfig,
) -> Result<PrimalDualResult> {
    if !(cfg.policy_lr > 0.0 && cfg.dual_lr > 0.0) {
        return Err(Error::InvalidArgument("learning rates must be positive".into()));
    }
    let (ns, na) = (spec.state_count, spec.action_count);
    let n = spec.constraint_count();
    let mut policy = init;
    let mut dual = DualTable::zeros(n, ns, na);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for iter in 0..=cfg.iterations {
        let probs = policy_table(spec, &policy)?;
        let task = evaluate_probs(spec, &probs, Channel::Task)?;
        let q_c = (0..n)
            .map(|i| Ok(evaluate_probs(spec, &probs, Channel::Constraint(i))?.q))
            .collect::<Result<Vec<_>>>()?;
        let occ = occupancy_with_discount(spec, &probs, spec.gamma)?;
        trace.push(TraceRow {
            iter,
            j_r: spec.initial_dist.iter().zip(&task.v).map(|(m, v)| m * v).sum(),
            max_violation: max_violation(&q_c, &occ, epsilon, cfg.support_tolerance),
            lambda_norm: dual.norms(),
        });
        if iter == cfg.iterations {
            break;
        }
        let mut w = task.q.clone();
        for (lam, q) in dual.lambda.iter().zip(&q_c) {
            for ((w, l), q) in w.iter_mut().zip(lam).zip(q) {
                *w -= l * (q - epsilon);
            }
        }
        let grad = exact_policy_gradient_with(&policy, &occ, &w)?;
        let norm = grad.norm();
        if !(norm <= 1e6) {
            return Err(Error::Diverged { iteration: iter, norm });
        }
        policy.params_mut().add_scaled(&grad, cfg.policy_lr);
        if !cfg.freeze_dual {
            dual = dual_update(&dual, &q_c, &occ, epsilon, cfg.dual_lr)?;
        }
    }
    Ok(PrimalDualResult { policy, dual, trace })
}
