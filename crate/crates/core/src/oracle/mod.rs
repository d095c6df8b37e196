//! Exact tabular machinery used as ground truth: policy evaluation, occupancy
//! measures, exhaustive enumeration, exact gradients and a primal-dual solver.

pub mod checks;
pub mod dual;
pub mod enumerate;

pub use dual::{
    dual_update, max_violation, primal_dual_solve, DualTable, PrimalDualConfig, PrimalDualResult, TraceRow,
};
pub use enumerate::{
    enumerate_risk_probabilities, enumerate_trajectories, state_action_marginals, RiskTables, ENUMERATION_BUDGET,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::approx::{ParamVector, Policy, TabularSoftmax};
use crate::error::{Error, Result};
use crate::mdp::{Channel, CmdpSpec};

/// State and action values of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValues {
    pub v: Vec<f64>,
    /// `q[s * A + a]`.
    pub q: Vec<f64>,
    /// Sup-norm Bellman residual of `q`.
    pub residual: f64,
}

/// Discounted state-action occupancy, normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub states: usize,
    pub actions: usize,
    pub discount: f64,
    /// `d[s * A + a]`.
    pub d: Vec<f64>,
}

impl Occupancy {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.actions + a]
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.d.chunks(self.actions).map(|row| row.iter().sum()).collect()
    }
}

pub(crate) fn check_probs(spec: &CmdpSpec, probs: &[f64]) -> Result<()> {
    if probs.len() != spec.state_count * spec.action_count {
        return Err(Error::Shape(format!(
            "policy table has {} entries, expected {}x{}",
            probs.len(),
            spec.state_count,
            spec.action_count
        )));
    }
    Ok(())
}

pub(crate) fn policy_table(spec: &CmdpSpec, policy: &TabularSoftmax) -> Result<Vec<f64>> {
    if policy.states() != spec.state_count || policy.actions() != spec.action_count {
        return Err(Error::Shape(format!(
            "policy is {}x{}, spec is {}x{}",
            policy.states(),
            policy.actions(),
            spec.state_count,
            spec.action_count
        )));
    }
    policy.prob_table()
}

fn solve(m: DMatrix<f64>, b: DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let x = m.lu().solve(&b).ok_or(Error::Singular(what))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what));
    }
    Ok(x)
}

/// Evaluates a policy given as a probability table `probs[s * A + a]`.
pub fn evaluate_probs(spec: &CmdpSpec, probs: &[f64], channel: Channel) -> Result<PolicyValues> {
    check_probs(spec, probs)?;
    let (ns, na) = (spec.state_count, spec.action_count);
    let gamma = spec.discount(channel)?;
    let mut payoff = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            payoff[s * na + a] = spec.expected_payoff(channel, s, a)?;
        }
    }
    // (I - γ P_π) V = r_π
    let mut m = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = probs[s * na + a];
            if pa == 0.0 {
                continue;
            }
            b[s] += pa * payoff[s * na + a];
            for (n, p) in spec.row(s, a).iter().enumerate() {
                m[(s, n)] -= gamma * pa * p;
            }
        }
    }
    let v: Vec<f64> = solve(m, b, "policy evaluation")?.iter().copied().collect();
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let next: f64 = spec.row(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            q[s * na + a] = payoff[s * na + a] + gamma * next;
        }
    }
    let mut residual = 0.0f64;
    for s in 0..ns {
        let vs: f64 = (0..na).map(|a| probs[s * na + a] * q[s * na + a]).sum();
        residual = residual.max((vs - v[s]).abs());
    }
    Ok(PolicyValues { v, q, residual })
}

/// Exact `Q^π` of one channel by a direct linear solve.
pub fn exact_policy_evaluation(spec: &CmdpSpec, policy: &TabularSoftmax, channel: Channel) -> Result<PolicyValues> {
    evaluate_probs(spec, &policy_table(spec, policy)?, channel)
}

/// `d(s,a) = (1-γ) Σ_t γ^t Pr(s_t = s, a_t = a)` for an arbitrary discount.
pub fn occupancy_with_discount(spec: &CmdpSpec, probs: &[f64], discount: f64) -> Result<Occupancy> {
    check_probs(spec, probs)?;
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::InvalidArgument(format!("discount {discount} outside [0, 1)")));
    }
    let (ns, na) = (spec.state_count, spec.action_count);
    // (I - γ P_π^T) ρ = (1-γ) μ0
    let mut m = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = probs[s * na + a];
            if pa == 0.0 {
                continue;
            }
            for (n, p) in spec.row(s, a).iter().enumerate() {
                m[(n, s)] -= discount * pa * p;
            }
        }
    }
    let b = DVector::from_iterator(ns, spec.initial_dist.iter().map(|x| (1.0 - discount) * x));
    let rho = solve(m, b, "occupancy")?;
    let mut d = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            d[s * na + a] = (rho[s] * probs[s * na + a]).max(0.0);
        }
    }
    Ok(Occupancy {
        states: ns,
        actions: na,
        discount,
        d,
    })
}

/// Occupancy under the task discount.
pub fn occupancy_measure(spec: &CmdpSpec, policy: &TabularSoftmax) -> Result<Occupancy> {
    occupancy_with_discount(spec, &policy_table(spec, policy)?, spec.gamma)
}

/// `E_{s~μ0}[V^π(s)]`.
pub fn exact_objective(spec: &CmdpSpec, policy: &TabularSoftmax, channel: Channel) -> Result<f64> {
    let vals = exact_policy_evaluation(spec, policy, channel)?;
    Ok(spec.initial_dist.iter().zip(&vals.v).map(|(m, v)| m * v).sum())
}

/// `Σ_{s,a} d(s,a) W(s,a) ∇log π(a|s)` under a given occupancy.
pub fn exact_policy_gradient_with(policy: &TabularSoftmax, occupancy: &Occupancy, w: &[f64]) -> Result<ParamVector> {
    if w.len() != occupancy.d.len() || policy.states() != occupancy.states || policy.actions() != occupancy.actions {
        return Err(Error::Shape("weight table, occupancy and policy disagree".into()));
    }
    let mut grad = policy.params().zeros_like();
    for s in 0..occupancy.states {
        for a in 0..occupancy.actions {
            let k = s * occupancy.actions + a;
            let scale = occupancy.d[k] * w[k];
            if scale != 0.0 {
                grad.add_scaled(&policy.log_prob_grad(&s, &a)?, scale);
            }
        }
    }
    Ok(grad)
}

/// Exact expectation of `W(s,a) ∇log π(a|s)` under the task-discount occupancy.
pub fn exact_policy_gradient(spec: &CmdpSpec, policy: &TabularSoftmax, w: &[f64]) -> Result<ParamVector> {
    exact_policy_gradient_with(policy, &occupancy_measure(spec, policy)?, w)
}

/// `∇_θ J_channel`, i.e. the occupancy-weighted estimator with the channel's
/// own discount and exact `Q`, rescaled by `1/(1-γ)`.
pub fn objective_gradient(spec: &CmdpSpec, policy: &TabularSoftmax, channel: Channel) -> Result<ParamVector> {
    let gamma = spec.discount(channel)?;
    let probs = policy_table(spec, policy)?;
    let occ = occupancy_with_discount(spec, &probs, gamma)?;
    let q = evaluate_probs(spec, &probs, channel)?.q;
    let mut g = exact_policy_gradient_with(policy, &occ, &q)?;
    g.scale(1.0 / (1.0 - gamma));
    Ok(g)
}

/// Oracle tables for golden-file comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDump {
    pub q_task: Vec<f64>,
    pub q_constraints: Vec<Vec<f64>>,
    pub occupancy: Vec<f64>,
    pub objective_task: f64,
    pub objective_constraints: Vec<f64>,
}

impl OracleDump {
    pub fn compute(spec: &CmdpSpec, policy: &TabularSoftmax) -> Result<Self> {
        let probs = policy_table(spec, policy)?;
        let objective = |v: &[f64]| spec.initial_dist.iter().zip(v).map(|(m, v)| m * v).sum::<f64>();
        let task = evaluate_probs(spec, &probs, Channel::Task)?;
        let mut q_constraints = Vec::new();
        let mut objective_constraints = Vec::new();
        for i in 0..spec.constraint_count() {
            let vals = evaluate_probs(spec, &probs, Channel::Constraint(i))?;
            objective_constraints.push(objective(&vals.v));
            q_constraints.push(vals.q);
        }
        Ok(Self {
            objective_task: objective(&task.v),
            q_task: task.q,
            q_constraints,
            occupancy: occupancy_with_discount(spec, &probs, spec.gamma)?.d,
            objective_constraints,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("oracle dump serialization is infallible")
    }
}
