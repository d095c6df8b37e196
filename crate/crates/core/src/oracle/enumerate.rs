//! Exhaustive path enumeration on small CMDPs.

use serde::{Deserialize, Serialize};

use super::policy_table;
use crate::approx::TabularSoftmax;
use crate::error::{Error, Result};
use crate::mdp::{CmdpSpec, Layer, RiskConvention, Step, Trajectory};

/// Maximum number of paths any enumeration may visit.
pub const ENUMERATION_BUDGET: f64 = 1e7;

fn guard(paths: f64) -> Result<()> {
    if paths > ENUMERATION_BUDGET {
        return Err(Error::EnumerationBudget {
            paths,
            budget: ENUMERATION_BUDGET,
        });
    }
    Ok(())
}

fn flag_mask(spec: &CmdpSpec, state: usize) -> u32 {
    spec.constraints
        .iter()
        .enumerate()
        .fold(0, |m, (i, c)| if c.indicator[state] != 0 { m | (1 << i) } else { m })
}

/// Per-step risk probabilities after each state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTables {
    pub horizon: usize,
    pub convention: RiskConvention,
    /// `p[i][s * A + a]`: risk `i` occurs within the window.
    pub p: Vec<Vec<f64>>,
    /// No risk at all occurs within the window.
    pub p_minus: Vec<f64>,
}

impl RiskTables {
    /// Largest `p_minus - min_i (1 - p_i)`; never positive for exact tables.
    pub fn upper_bound_excess(&self) -> f64 {
        (0..self.p_minus.len())
            .map(|k| {
                let bound = self.p.iter().map(|p| 1.0 - p[k]).fold(1.0, f64::min);
                self.p_minus[k] - bound
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `Π_i (1 - p_i) - p_minus`; positive where the product bound fails.
    pub fn product_bound_gap(&self) -> f64 {
        (0..self.p_minus.len())
            .map(|k| self.p.iter().map(|p| 1.0 - p[k]).product::<f64>() - self.p_minus[k])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

struct RiskWalk<'a> {
    spec: &'a CmdpSpec,
    probs: &'a [f64],
    masks: Vec<u32>,
    full: u32,
    // probability mass per final risk mask
    acc: Vec<f64>,
}

impl RiskWalk<'_> {
    fn walk(&mut self, state: usize, prob: f64, mask: u32, steps_left: usize) {
        if steps_left == 0 || mask == self.full {
            self.acc[mask as usize] += prob;
            return;
        }
        let na = self.spec.action_count;
        for a in 0..na {
            let pa = self.probs[state * na + a];
            if pa == 0.0 {
                continue;
            }
            for (n, &p) in self.spec.row(state, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                self.walk(n, prob * pa * p, mask | self.masks[n], steps_left - 1);
            }
        }
    }
}

/// Exact `p_i(s,a)` and `p_-(s,a)` over a window of `horizon` further steps by
/// summing the probabilities of every continuation path.
///
/// With [`RiskConvention::StrictlyAfter`] the flag of the state entered by
/// `(s, a)` itself is excluded, matching the hindsight indicators of a step.
pub fn enumerate_risk_probabilities(
    spec: &CmdpSpec,
    policy: &TabularSoftmax,
    horizon: usize,
    convention: RiskConvention,
) -> Result<RiskTables> {
    let n = spec.constraint_count();
    if n > 16 {
        return Err(Error::InvalidArgument(
            "at most 16 constraints can be enumerated".into(),
        ));
    }
    let (ns, na) = (spec.state_count, spec.action_count);
    guard((ns * na) as f64 * ns as f64 * ((ns * na) as f64).powi(horizon as i32))?;
    let probs = policy_table(spec, policy)?;
    let masks: Vec<u32> = (0..ns).map(|s| flag_mask(spec, s)).collect();
    let mut walk = RiskWalk {
        spec,
        probs: &probs,
        masks,
        full: (1u32 << n) - 1,
        acc: vec![0.0; 1 << n],
    };
    let mut p = vec![vec![0.0; ns * na]; n];
    let mut p_minus = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            walk.acc.iter_mut().for_each(|x| *x = 0.0);
            for (next, &pn) in spec.row(s, a).iter().enumerate() {
                if pn == 0.0 {
                    continue;
                }
                let start = match convention {
                    RiskConvention::StrictlyAfter => 0,
                    RiskConvention::Inclusive => walk.masks[next],
                };
                walk.walk(next, pn, start, horizon);
            }
            let k = s * na + a;
            p_minus[k] = walk.acc[0];
            for (mask, &mass) in walk.acc.iter().enumerate() {
                for (i, pi) in p.iter_mut().enumerate() {
                    if mask & (1 << i) != 0 {
                        pi[k] += mass;
                    }
                }
            }
        }
    }
    Ok(RiskTables {
        horizon,
        convention,
        p,
        p_minus,
    })
}

/// Every length-`horizon` trajectory from `μ0` with its probability. Steps
/// carry the entered state's flags and the exact log-probabilities.
pub fn enumerate_trajectories(
    spec: &CmdpSpec,
    policy: &TabularSoftmax,
    horizon: usize,
) -> Result<Vec<(Trajectory<usize, usize>, f64)>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let (ns, na) = (spec.state_count, spec.action_count);
    guard(ns as f64 * ((ns * na) as f64).powi(horizon as i32))?;
    let probs = policy_table(spec, policy)?;
    let mut out = Vec::new();
    let mut stack = Vec::with_capacity(horizon);
    fn rec(
        spec: &CmdpSpec,
        probs: &[f64],
        state: usize,
        prob: f64,
        horizon: usize,
        stack: &mut Vec<Step<usize, usize>>,
        out: &mut Vec<(Trajectory<usize, usize>, f64)>,
    ) {
        if stack.len() == horizon {
            out.push((
                Trajectory {
                    seed: 0,
                    steps: stack.clone(),
                    terminal: false,
                },
                prob,
            ));
            return;
        }
        let na = spec.action_count;
        for a in 0..na {
            let pa = probs[state * na + a];
            if pa == 0.0 {
                continue;
            }
            for (n, &p) in spec.row(state, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                stack.push(Step {
                    state,
                    action: a,
                    next_state: n,
                    task_reward: spec.r(state, a, n),
                    constraint_flags: spec.constraints.iter().map(|c| c.indicator[n]).collect(),
                    log_prob: pa.ln(),
                    layer: Layer::Task,
                });
                rec(spec, probs, n, prob * pa * p, horizon, stack, out);
                stack.pop();
            }
        }
    }
    for s in 0..ns {
        let m = spec.initial_dist[s];
        if m > 0.0 {
            rec(spec, &probs, s, m, horizon, &mut stack, &mut out);
        }
    }
    Ok(out)
}

/// `m[t][s * A + a] = Pr(s_t = s, a_t = a)` for `t < horizon`.
pub fn state_action_marginals(spec: &CmdpSpec, policy: &TabularSoftmax, horizon: usize) -> Result<Vec<Vec<f64>>> {
    let probs = policy_table(spec, policy)?;
    let (ns, na) = (spec.state_count, spec.action_count);
    let mut out = Vec::with_capacity(horizon);
    let mut rho = spec.initial_dist.clone();
    for _ in 0..horizon {
        let m: Vec<f64> = (0..ns * na).map(|k| rho[k / na] * probs[k]).collect();
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let w = m[s * na + a];
                if w == 0.0 {
                    continue;
                }
                for (n, p) in spec.row(s, a).iter().enumerate() {
                    next[n] += w * p;
                }
            }
        }
        out.push(m);
        rho = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::ConstraintSpec;
    use crate::oracle::tests::{random_policy, random_spec};

    #[test]
    fn risk_free_spec() {
        let mut spec = random_spec(1, 3, 2);
        for c in &mut spec.constraints {
            c.indicator = vec![0; 3];
        }
        let t = enumerate_risk_probabilities(&spec, &random_policy(2, 3, 2), 4, RiskConvention::StrictlyAfter).unwrap();
        assert!(t.p.iter().flatten().all(|&p| p == 0.0));
        assert!(t.p_minus.iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn deterministic_chain_enters_flagged_state() {
        // s0 -> s1 -> s2 (flagged) -> s2
        let spec = CmdpSpec {
            state_count: 3,
            action_count: 1,
            transition: vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            reward: vec![0.0; 9],
            gamma: 0.9,
            constraints: vec![ConstraintSpec::new("c", vec![0, 0, 1], 0.9, 1.0)],
            epsilon: 0.1,
            initial_dist: vec![1.0, 0.0, 0.0],
        };
        let pi = TabularSoftmax::new(3, 1);
        let strict = enumerate_risk_probabilities(&spec, &pi, 2, RiskConvention::StrictlyAfter).unwrap();
        assert_eq!(strict.p[0][0], 1.0);
        let incl = enumerate_risk_probabilities(&spec, &pi, 0, RiskConvention::Inclusive).unwrap();
        assert_eq!(incl.p[0], vec![0.0, 1.0, 1.0]);
        let none = enumerate_risk_probabilities(&spec, &pi, 0, RiskConvention::StrictlyAfter).unwrap();
        assert!(none.p[0].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn upper_bound_holds_on_random_specs() {
        for seed in 0..5 {
            let spec = random_spec(seed, 3, 2);
            let t = enumerate_risk_probabilities(&spec, &random_policy(seed, 3, 2), 4, RiskConvention::StrictlyAfter)
                .unwrap();
            assert!(t.upper_bound_excess() <= 1e-12);
            for k in 0..6 {
                let total = t.p_minus[k];
                assert!((0.0..=1.0 + 1e-12).contains(&total));
            }
        }
    }

    #[test]
    fn budget_guard() {
        let spec = random_spec(1, 10, 4);
        let pi = random_policy(1, 10, 4);
        assert!(matches!(
            enumerate_risk_probabilities(&spec, &pi, 10, RiskConvention::StrictlyAfter),
            Err(Error::EnumerationBudget { .. })
        ));
        assert!(matches!(
            enumerate_trajectories(&spec, &pi, 10),
            Err(Error::EnumerationBudget { .. })
        ));
    }

    #[test]
    fn trajectory_probabilities_sum_to_one_and_match_marginals() {
        let spec = random_spec(4, 3, 2);
        let pi = random_policy(5, 3, 2);
        let trajs = enumerate_trajectories(&spec, &pi, 4).unwrap();
        let total: f64 = trajs.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let m = state_action_marginals(&spec, &pi, 4).unwrap();
        for t in 0..4 {
            let mut freq = [0.0; 6];
            for (traj, p) in &trajs {
                let s = &traj.steps[t];
                freq[s.state * 2 + s.action] += p;
            }
            for k in 0..6 {
                assert!((freq[k] - m[t][k]).abs() < 1e-12);
            }
        }
    }
}
