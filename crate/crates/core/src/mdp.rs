//! Constrained MDP description, rollout records and hindsight risk indicators.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;

/// One risk channel: a binary state indicator with its own discount and weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub name: String,
    /// `indicator[s]` is `C_i(s)`; must be 0 or 1.
    pub indicator: Vec<u8>,
    pub gamma_c: f64,
    pub weight: f64,
}

impl ConstraintSpec {
    pub fn new(name: impl Into<String>, indicator: Vec<u8>, gamma_c: f64, weight: f64) -> Self {
        Self {
            name: name.into(),
            indicator,
            gamma_c,
            weight,
        }
    }

    #[inline]
    pub fn flag(&self, state: usize) -> f64 {
        f64::from(self.indicator[state])
    }
}

/// A finite constrained MDP.
///
/// Transition and reward tensors are stored flat in `[s][a][s']` order. Constraint
/// costs are credited on entry: the transition `s -> s'` pays `C_i(s')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmdpSpec {
    pub state_count: usize,
    pub action_count: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub gamma: f64,
    pub constraints: Vec<ConstraintSpec>,
    pub epsilon: f64,
    pub initial_dist: Vec<f64>,
}

impl CmdpSpec {
    #[inline]
    pub fn idx(&self, s: usize, a: usize, next: usize) -> usize {
        (s * self.action_count + a) * self.state_count + next
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[self.idx(s, a, next)]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.idx(s, a, next)]
    }

    /// Row `P[s][a][·]`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.idx(s, a, 0);
        &self.transition[start..start + self.state_count]
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    /// Discount attached to a channel.
    pub fn discount(&self, channel: Channel) -> Result<f64> {
        match channel {
            Channel::Task => Ok(self.gamma),
            Channel::Constraint(i) => self.constraints.get(i).map(|c| c.gamma_c).ok_or(Error::UnknownChannel {
                index: i,
                count: self.constraints.len(),
            }),
        }
    }

    /// Expected one-step payoff of a channel, `Σ_s' P(s'|s,a) r_channel(s,a,s')`.
    pub fn expected_payoff(&self, channel: Channel, s: usize, a: usize) -> Result<f64> {
        let row = self.row(s, a);
        match channel {
            Channel::Task => {
                let start = self.idx(s, a, 0);
                let rewards = &self.reward[start..start + self.state_count];
                Ok(row.iter().zip(rewards).map(|(p, r)| p * r).sum())
            }
            Channel::Constraint(i) => {
                let c = self.constraints.get(i).ok_or(Error::UnknownChannel {
                    index: i,
                    count: self.constraints.len(),
                })?;
                Ok(row.iter().enumerate().map(|(next, p)| p * c.flag(next)).sum())
            }
        }
    }

    /// Runs [`validate_cmdp`] and turns a non-empty report into an error.
    pub fn validated(self) -> Result<Self> {
        let issues = validate_cmdp(&self);
        if issues.is_empty() {
            Ok(self)
        } else {
            let joined = issues.iter().map(|i| i.to_string()).collect::<Vec<_>>();
            Err(Error::InvalidArgument(joined.join("; ")))
        }
    }
}

/// Which reward stream a value function or return refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Task,
    Constraint(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    EmptySpace {
        what: &'static str,
    },
    TensorSize {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    NegativeProbability {
        s: usize,
        a: usize,
        next: usize,
        value: f64,
    },
    RowSum {
        s: usize,
        a: usize,
        sum: f64,
    },
    NonFiniteReward {
        s: usize,
        a: usize,
        next: usize,
    },
    Discount {
        what: String,
        value: f64,
    },
    Epsilon(f64),
    InitialDist {
        sum: f64,
        negative: bool,
    },
    IndicatorLength {
        constraint: usize,
        expected: usize,
        got: usize,
    },
    IndicatorValue {
        constraint: usize,
        state: usize,
        value: u8,
    },
    Weight {
        constraint: usize,
        value: f64,
    },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptySpace { what } => write!(f, "{what} must be positive"),
            Self::TensorSize { what, expected, got } => {
                write!(f, "{what} has {got} entries, expected {expected}")
            }
            Self::NegativeProbability { s, a, next, value } => {
                write!(f, "P[{s}][{a}][{next}] = {value} is negative")
            }
            Self::RowSum { s, a, sum } => write!(f, "row-sum of P[{s}][{a}] is {sum}, expected 1"),
            Self::NonFiniteReward { s, a, next } => write!(f, "R[{s}][{a}][{next}] is not finite"),
            Self::Discount { what, value } => {
                write!(f, "discount {what} = {value} must lie strictly inside (0, 1)")
            }
            Self::Epsilon(e) => write!(f, "epsilon = {e} must be a nonnegative real"),
            Self::InitialDist { sum, negative } => write!(
                f,
                "initial distribution sums to {sum}{}",
                if *negative { " and has negative entries" } else { "" }
            ),
            Self::IndicatorLength {
                constraint,
                expected,
                got,
            } => write!(
                f,
                "constraint {constraint} indicator has {got} entries, expected {expected}"
            ),
            Self::IndicatorValue {
                constraint,
                state,
                value,
            } => write!(
                f,
                "constraint {constraint} indicator at state {state} is {value}, expected 0 or 1"
            ),
            Self::Weight { constraint, value } => {
                write!(f, "constraint {constraint} weight {value} must be nonnegative")
            }
        }
    }
}

fn unit_open(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Checks every structural invariant of a [`CmdpSpec`]; an empty report means valid.
pub fn validate_cmdp(spec: &CmdpSpec) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let (ns, na) = (spec.state_count, spec.action_count);
    if ns == 0 {
        issues.push(ValidationIssue::EmptySpace { what: "state_count" });
    }
    if na == 0 {
        issues.push(ValidationIssue::EmptySpace { what: "action_count" });
    }
    let expected = ns * na * ns;
    let tensors_ok = spec.transition.len() == expected && spec.reward.len() == expected;
    if spec.transition.len() != expected {
        issues.push(ValidationIssue::TensorSize {
            what: "transition",
            expected,
            got: spec.transition.len(),
        });
    }
    if spec.reward.len() != expected {
        issues.push(ValidationIssue::TensorSize {
            what: "reward",
            expected,
            got: spec.reward.len(),
        });
    }
    if tensors_ok {
        for s in 0..ns {
            for a in 0..na {
                let mut sum = 0.0;
                for next in 0..ns {
                    let p = spec.p(s, a, next);
                    if !(p >= 0.0) {
                        issues.push(ValidationIssue::NegativeProbability { s, a, next, value: p });
                    }
                    if !spec.r(s, a, next).is_finite() {
                        issues.push(ValidationIssue::NonFiniteReward { s, a, next });
                    }
                    sum += p;
                }
                if !((sum - 1.0).abs() <= SUM_TOL) {
                    issues.push(ValidationIssue::RowSum { s, a, sum });
                }
            }
        }
    }
    if !unit_open(spec.gamma) {
        issues.push(ValidationIssue::Discount {
            what: "gamma".into(),
            value: spec.gamma,
        });
    }
    if !(spec.epsilon >= 0.0) || !spec.epsilon.is_finite() {
        issues.push(ValidationIssue::Epsilon(spec.epsilon));
    }
    if spec.initial_dist.len() != ns {
        issues.push(ValidationIssue::TensorSize {
            what: "initial_dist",
            expected: ns,
            got: spec.initial_dist.len(),
        });
    } else {
        let sum: f64 = spec.initial_dist.iter().sum();
        let negative = spec.initial_dist.iter().any(|&p| !(p >= 0.0));
        if negative || !((sum - 1.0).abs() <= SUM_TOL) {
            issues.push(ValidationIssue::InitialDist { sum, negative });
        }
    }
    for (i, c) in spec.constraints.iter().enumerate() {
        if !unit_open(c.gamma_c) {
            issues.push(ValidationIssue::Discount {
                what: format!("gamma_c[{i}] ({})", c.name),
                value: c.gamma_c,
            });
        }
        if !(c.weight >= 0.0) {
            issues.push(ValidationIssue::Weight {
                constraint: i,
                value: c.weight,
            });
        }
        if c.indicator.len() != ns {
            issues.push(ValidationIssue::IndicatorLength {
                constraint: i,
                expected: ns,
                got: c.indicator.len(),
            });
        }
        for (state, &v) in c.indicator.iter().enumerate() {
            if v > 1 {
                issues.push(ValidationIssue::IndicatorValue {
                    constraint: i,
                    state,
                    value: v,
                });
            }
        }
    }
    issues
}

/// Which layer of a hierarchical controller produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Task,
    Recovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step<O, A> {
    pub state: O,
    pub action: A,
    pub next_state: O,
    pub task_reward: f64,
    /// Flags of the state entered by this step, one per constraint.
    pub constraint_flags: Vec<u8>,
    pub log_prob: f64,
    pub layer: Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<O, A> {
    pub seed: u64,
    pub steps: Vec<Step<O, A>>,
    /// True when the episode ended in a terminal state (not by truncation).
    pub terminal: bool,
}

impl<O, A> Trajectory<O, A> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn constraint_count(&self) -> usize {
        self.steps.first().map_or(0, |s| s.constraint_flags.len())
    }

    /// Undiscounted sum of task rewards.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.task_reward).sum()
    }

    /// Number of steps flagging each constraint.
    pub fn violation_counts(&self, n: usize) -> Vec<usize> {
        let mut counts = vec![0; n];
        for step in &self.steps {
            for (c, &f) in counts.iter_mut().zip(&step.constraint_flags) {
                *c += usize::from(f);
            }
        }
        counts
    }

    pub fn validate(&self, constraints: usize) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        for step in &self.steps {
            if step.constraint_flags.len() != constraints {
                return Err(Error::ConstraintCount {
                    expected: constraints,
                    got: step.constraint_flags.len(),
                });
            }
            if step.constraint_flags.iter().any(|&f| f > 1) {
                return Err(Error::InvalidArgument("constraint flag outside {0,1}".into()));
            }
            if !step.log_prob.is_finite() {
                return Err(Error::NonFinite("log_prob"));
            }
        }
        Ok(())
    }
}

impl<O: Serialize, A: Serialize> Trajectory<O, A> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serialization is infallible")
    }
}

/// Where the hindsight window starts relative to the step being scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskConvention {
    /// `chi[t]` looks at the flags of steps `t' > t` only.
    #[default]
    StrictlyAfter,
    /// `chi[t]` also includes the flags of step `t` itself.
    Inclusive,
}

/// Hindsight risk indicators of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskIndicators {
    /// `chi[t][i]`: risk `i` occurs after step `t`.
    pub chi: Vec<Vec<u8>>,
    /// `chi_bar[t]`: no risk at all after step `t`.
    pub chi_bar: Vec<u8>,
}

pub fn compute_risk_indicators<O, A>(traj: &Trajectory<O, A>) -> Result<RiskIndicators> {
    compute_risk_indicators_with(traj, RiskConvention::StrictlyAfter)
}

pub fn compute_risk_indicators_with<O, A>(
    traj: &Trajectory<O, A>,
    convention: RiskConvention,
) -> Result<RiskIndicators> {
    if traj.steps.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let n = traj.constraint_count();
    let len = traj.steps.len();
    let mut chi = vec![vec![0u8; n]; len];
    // seen[i]: some step strictly after the current one flags i
    let mut seen = vec![0u8; n];
    for t in (0..len).rev() {
        let flags = &traj.steps[t].constraint_flags;
        if flags.len() != n {
            return Err(Error::ConstraintCount {
                expected: n,
                got: flags.len(),
            });
        }
        for i in 0..n {
            chi[t][i] = match convention {
                RiskConvention::StrictlyAfter => seen[i],
                RiskConvention::Inclusive => seen[i] | flags[i],
            };
            seen[i] |= flags[i];
        }
    }
    let chi_bar = chi.iter().map(|row| row.iter().map(|&c| 1 - c).product()).collect();
    Ok(RiskIndicators { chi, chi_bar })
}

/// Per-step discounted returns of one channel: `out[t] = Σ_{k≥t} discount^{k-t} value(k)`.
pub fn discounted_return<O, A>(traj: &Trajectory<O, A>, channel: Channel, discount: f64) -> Result<Vec<f64>> {
    if !unit_open(discount) {
        return Err(Error::InvalidArgument(format!("discount {discount} outside (0, 1)")));
    }
    if let Channel::Constraint(i) = channel {
        let count = traj.constraint_count();
        if i >= count {
            return Err(Error::UnknownChannel { index: i, count });
        }
    }
    let mut out = vec![0.0; traj.steps.len()];
    let mut acc = 0.0;
    for (t, step) in traj.steps.iter().enumerate().rev() {
        let value = match channel {
            Channel::Task => step.task_reward,
            Channel::Constraint(i) => f64::from(step.constraint_flags[i]),
        };
        acc = value + discount * acc;
        out[t] = acc;
    }
    Ok(out)
}
