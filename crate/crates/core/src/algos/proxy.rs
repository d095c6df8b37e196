use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the suppression estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuppressionConfig {
    /// Sharpness of the no-risk proxy `exp(-kappa Σ Q_C)`.
    pub kappa: f64,
    /// Per-constraint weights `w_i`.
    pub weights: Vec<f64>,
    /// Per-constraint safety-layer thresholds.
    pub epsilon: Vec<f64>,
    pub policy_lr: f64,
    #[serde(default)]
    pub normalize_advantage: bool,
    /// Clamp the risk proxy to `[0, 1]`.
    #[serde(default = "yes")]
    pub clamp_proxy: bool,
}

fn yes() -> bool {
    true
}

impl SuppressionConfig {
    pub fn new(kappa: f64, weights: Vec<f64>) -> Self {
        let n = weights.len();
        Self {
            kappa,
            weights,
            epsilon: vec![0.1; n],
            policy_lr: 0.1,
            normalize_advantage: false,
            clamp_proxy: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        if self.epsilon.len() != self.weights.len() {
            return Err(Error::ConstraintCount {
                expected: self.weights.len(),
                got: self.epsilon.len(),
            });
        }
        if !(self.policy_lr > 0.0) {
            return Err(Error::InvalidArgument("policy_lr must be positive".into()));
        }
        Ok(())
    }

    pub fn constraint_count(&self) -> usize {
        self.weights.len()
    }

    pub fn ensure_constraints(&self, n: usize) -> Result<()> {
        if self.weights.len() != n {
            return Err(Error::ConstraintCount {
                expected: n,
                got: self.weights.len(),
            });
        }
        Ok(())
    }
}

/// Risk-probability proxy `min(Q_C, 1)`, or `Q_C` unclamped.
pub fn proxy_risk_prob(q_c: f64, clamp: bool) -> Result<f64> {
    if !q_c.is_finite() {
        return Err(Error::NonFinite("safety critic value"));
    }
    if q_c < 0.0 {
        return Err(Error::InvalidArgument(format!("negative safety critic value {q_c}")));
    }
    Ok(if clamp { q_c.min(1.0) } else { q_c })
}

/// No-risk proxy `exp(-kappa Σ_i Q_{C_i})`.
pub fn proxy_no_risk_prob(q_c: &[f64], kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    let mut sum = 0.0;
    for &q in q_c {
        if !q.is_finite() {
            return Err(Error::NonFinite("safety critic value"));
        }
        if q < 0.0 {
            return Err(Error::InvalidArgument(format!("negative safety critic value {q}")));
        }
        sum += q;
    }
    Ok((-kappa * sum).exp())
}

/// Weights `r_i = w_i p̃_i / p̃_-` of the rewritten estimator.
pub fn suppression_weights(q_c: &[f64], cfg: &SuppressionConfig) -> Result<Vec<f64>> {
    cfg.ensure_constraints(q_c.len())?;
    let p_minus = proxy_no_risk_prob(q_c, cfg.kappa)?;
    q_c.iter()
        .zip(&cfg.weights)
        .map(|(&q, &w)| Ok(w * proxy_risk_prob(q, cfg.clamp_proxy)? / p_minus))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn proxy_examples() {
        assert_eq!(proxy_risk_prob(0.3, true).unwrap(), 0.3);
        assert_eq!(proxy_risk_prob(2.5, true).unwrap(), 1.0);
        assert_eq!(proxy_risk_prob(2.5, false).unwrap(), 2.5);
        assert_eq!(proxy_risk_prob(0.0, true).unwrap(), 0.0);
        assert!(matches!(proxy_risk_prob(-0.1, true), Err(Error::InvalidArgument(_))));
        assert!(proxy_risk_prob(f64::NAN, true).is_err());
    }

    #[test]
    fn no_risk_examples() {
        assert_eq!(proxy_no_risk_prob(&[0.0, 0.0], 1.0).unwrap(), 1.0);
        let v = proxy_no_risk_prob(&[0.5, 0.25], 2.0).unwrap();
        assert!((v - (-1.5f64).exp()).abs() < 1e-15);
        assert!(proxy_no_risk_prob(&[0.1], 0.0).is_err());
        assert!(proxy_no_risk_prob(&[-0.1], 1.0).is_err());
    }

    #[test]
    fn weights_match_formula() {
        let cfg = SuppressionConfig::new(1.0, vec![1.0, 2.0]);
        let r = suppression_weights(&[0.5, 0.0], &cfg).unwrap();
        assert!((r[0] - 0.5 * 0.5f64.exp()).abs() < 1e-12);
        assert_eq!(r[1], 0.0);
        assert!(matches!(
            suppression_weights(&[0.5], &cfg),
            Err(Error::ConstraintCount { .. })
        ));
    }

    proptest! {
        #[test]
        fn proxies_stay_in_unit_interval(q in proptest::collection::vec(0.0f64..50.0, 0..5), kappa in 0.01f64..10.0) {
            for &x in &q {
                let p = proxy_risk_prob(x, true).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
            }
            let pm = proxy_no_risk_prob(&q, kappa).unwrap();
            prop_assert!((0.0..=1.0).contains(&pm));
        }

        #[test]
        fn no_risk_proxy_is_monotone(q in proptest::collection::vec(0.0f64..5.0, 1..4), bump in 0.0f64..3.0, k in 0usize..4) {
            let i = k % q.len();
            let mut q2 = q.clone();
            q2[i] += bump;
            prop_assert!(proxy_no_risk_prob(&q2, 1.3).unwrap() <= proxy_no_risk_prob(&q, 1.3).unwrap());
        }
    }
}
