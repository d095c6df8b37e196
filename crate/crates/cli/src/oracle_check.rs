//! Oracle-versus-estimator verification report for an enumerable environment.

use objsup_core::algos::SuppressionConfig;
use objsup_core::approx::TabularQ;
use objsup_core::envs::HazardGrid;
use objsup_core::oracle::checks::{
    dual_monotonicity, policy_gradient_errors, proxy_bound, random_batch, random_critics, random_tabular_policy,
    reduction_error, rewrite_error, tower_gap, PropertyReport,
};
use objsup_core::seed::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::{EnvironmentConfig, ExperimentConfig};
use crate::error::HarnessError;

pub const REDUCTION_TOL: f64 = 1e-12;
pub const REWRITE_TOL: f64 = 1e-12;
pub const TOWER_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-4;

/// Property names in report order.
pub const PROPERTIES: [&str; 6] = [
    "reduction",
    "rewrite_identity",
    "tower_equivalence",
    "gradient_check",
    "proxy_bound",
    "dual_monotonicity",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyEntry {
    #[serde(flatten)]
    pub result: PropertyReport,
    /// Why the property could not be evaluated, if it could not.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub passed: bool,
    pub properties: Vec<PropertyEntry>,
    /// Largest `Π_i (1 - p_i) - p_-`; reported, never asserted.
    pub product_bound_gap: Option<f64>,
}

fn entry(name: &str, tolerance: f64, measured: objsup_core::Result<f64>) -> PropertyEntry {
    match measured {
        Ok(error) => PropertyEntry {
            result: PropertyReport::new(name, error, tolerance),
            detail: None,
        },
        Err(e) => PropertyEntry {
            result: PropertyReport::new(name, f64::INFINITY, tolerance),
            detail: Some(e.to_string()),
        },
    }
}

/// Runs every property on the configured grid under a random tabular policy.
/// Property failures are report entries; only a non-grid environment is an error.
pub fn run_oracle_check(cfg: &ExperimentConfig) -> Result<OracleReport, HarnessError> {
    let EnvironmentConfig::Grid(grid_cfg) = &cfg.environment else {
        return Err(HarnessError::Config {
            path: "environment".into(),
            message: "oracle-check needs an enumerable (grid) environment".into(),
        });
    };
    let oc = &cfg.oracle_check;
    let grid = HazardGrid::new(grid_cfg.clone())?;
    let gammas = &cfg.run.constraint_gammas;
    let weights = &cfg.suppression.weights;
    let spec = grid.to_cmdp(
        cfg.run.gamma,
        [gammas[0], gammas[1]],
        [weights[0], weights[1]],
        cfg.suppression.epsilon[0],
    );
    let (ns, na) = (spec.state_count, spec.action_count);
    let seed = |label: &str| derive_seed(oc.seed, label);
    let policy = random_tabular_policy(seed("policy"), ns, na);
    let supp: SuppressionConfig = cfg.suppression.clone();

    let mut zeroed = random_critics(seed("critics"), ns, na, 2, 1.0);
    zeroed.safety = (0..2)
        .map(|_| TabularQ::from_table(ns, na, vec![oc.corrupt_critic; ns * na]))
        .collect::<Result<_, _>>()?;
    let reduction = reduction_error(
        &spec,
        &policy,
        &zeroed,
        &supp,
        8,
        cfg.run.horizon.min(20),
        seed("reduction"),
    );

    let critics = random_critics(seed("critics"), ns, na, 2, 2.0);
    let rewrite = (0..10)
        .map(|k| {
            let batch = random_batch(derive_seed(seed("rewrite"), &k.to_string()), ns, na, 64);
            rewrite_error(&policy, &batch, &critics, &supp)
        })
        .try_fold(0.0f64, |m, e| e.map(|e| m.max(e)));

    let tower = tower_gap(&spec, &policy, &critics, weights, oc.horizon);
    let gradient = policy_gradient_errors(&spec, &policy, 1e-5).map(|v| v.into_iter().fold(0.0, f64::max));
    // longest risk window that follows a step of a horizon-length trajectory
    let proxy = proxy_bound(&spec, &policy, oc.horizon.saturating_sub(1).max(1));
    let dual = dual_monotonicity(&spec, &policy, 0.5, seed("dual"));

    let product_bound_gap = proxy.as_ref().ok().map(|r| r.product_bound_gap);
    let properties = vec![
        entry(PROPERTIES[0], REDUCTION_TOL, reduction),
        entry(PROPERTIES[1], REWRITE_TOL, rewrite),
        entry(PROPERTIES[2], TOWER_TOL, tower),
        entry(PROPERTIES[3], GRADIENT_TOL, gradient),
        // counts of offending cells; any count of 1 or more fails
        entry(PROPERTIES[4], 0.5, proxy.map(|r| r.upper_violations as f64)),
        entry(
            PROPERTIES[5],
            0.5,
            dual.map(|r| (r.mismatches + usize::from(r.min_lambda < 0.0)) as f64),
        ),
    ];
    Ok(OracleReport {
        name: cfg.name.clone(),
        passed: properties.iter().all(|p| p.result.passed),
        properties,
        product_bound_gap,
    })
}
