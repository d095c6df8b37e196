//! Experiment configuration files.

use std::path::{Path, PathBuf};

use objsup_core::algos::{Method, RecoveryConfig, SuppressionConfig, TrainerConfig};
use objsup_core::approx::OptimizerKind;
use objsup_core::critics::CriticTrainConfig;
use objsup_core::envs::{HazardGridConfig, PointNav2DConfig};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// One experiment: environment, method, hyperparameters, seeds and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Names the output subdirectory.
    pub name: String,
    pub environment: EnvironmentConfig,
    pub method: Method,
    pub suppression: SuppressionConfig,
    /// Required by methods with a safety layer.
    #[serde(default)]
    pub recovery: Option<RecoveryConfig>,
    pub critic: CriticSection,
    #[serde(default)]
    pub policy: PolicySection,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub oracle_check: OracleCheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    Grid(HazardGridConfig),
    Nav(NavSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavSection {
    pub config: PointNav2DConfig,
    /// Number of discrete headings at full speed (plus a stop action); omit
    /// for continuous velocity commands.
    #[serde(default)]
    pub headings: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticSection {
    pub train: CriticTrainConfig,
    /// Hidden widths of MLP critics; unused by tabular critics.
    #[serde(default = "default_critic_hidden")]
    pub hidden: Vec<usize>,
}

fn default_critic_hidden() -> Vec<usize> {
    vec![32, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    /// Hidden widths of MLP policies; unused by tabular policies.
    #[serde(default = "default_policy_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Initial log standard deviation of continuous policies.
    #[serde(default = "default_log_std")]
    pub init_log_std: f64,
}

fn default_policy_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

fn default_log_std() -> f64 {
    -0.5
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            hidden: default_policy_hidden(),
            optimizer: default_optimizer(),
            init_log_std: default_log_std(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub constraint_gammas: Vec<f64>,
    #[serde(default = "one")]
    pub action_samples: usize,
    /// Evaluation rollouts per seed after training.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
}

fn one() -> usize {
    1
}

fn default_eval_episodes() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_output_dir(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCheckSection {
    /// Added to every safety-critic entry of the reduction check; nonzero
    /// values break the reduction on purpose.
    #[serde(default)]
    pub corrupt_critic: f64,
    /// Trajectory length of the enumeration-based properties.
    #[serde(default = "default_oracle_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_oracle_horizon() -> usize {
    3
}

impl Default for OracleCheckSection {
    fn default() -> Self {
        Self {
            corrupt_critic: 0.0,
            horizon: default_oracle_horizon(),
            seed: 0,
        }
    }
}

impl EnvironmentConfig {
    pub fn constraint_count(&self) -> usize {
        2
    }
}

impl ExperimentConfig {
    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |path: &str, message: String| {
            Err(HarnessError::Config {
                path: path.into(),
                message,
            })
        };
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", format!("{:?} is not a plain file name", self.name));
        }
        if self.run.seeds.is_empty() {
            return bad("run.seeds", "at least one seed is required".into());
        }
        if self.method.uses_safety_layer() && self.recovery.is_none() {
            return bad(
                "recovery",
                format!("method {} requires a recovery section", self.method.name()),
            );
        }
        match &self.environment {
            EnvironmentConfig::Grid(g) => g.validate(),
            EnvironmentConfig::Nav(n) => {
                if n.headings == Some(0) {
                    return bad("environment.nav.headings", "must be positive".into());
                }
                n.config.validate()
            }
        }
        .map_err(|e| HarnessError::Config {
            path: "environment".into(),
            message: e.to_string(),
        })?;
        self.trainer_config()
            .validate(self.environment.constraint_count())
            .map_err(|e| HarnessError::Config {
                path: "(trainer)".into(),
                message: e.to_string(),
            })
    }

    /// Recovery settings; methods without a safety layer get an inert copy
    /// derived from the suppression section.
    pub fn recovery_config(&self) -> RecoveryConfig {
        self.recovery.clone().unwrap_or_else(|| RecoveryConfig {
            weights: self.suppression.weights.clone(),
            suppression_weighted: false,
            include_task_term: false,
            kappa: self.suppression.kappa,
            lr: self.suppression.policy_lr,
            normalize_advantage: false,
        })
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            method: self.method,
            gamma: self.run.gamma,
            constraint_gammas: self.run.constraint_gammas.clone(),
            suppression: self.suppression.clone(),
            recovery: self.recovery_config(),
            critic: self.critic.train.clone(),
            episodes_per_iteration: self.run.episodes_per_iteration,
            horizon: self.run.horizon,
            action_samples: self.run.action_samples,
            policy_optimizer: self.policy.optimizer,
        }
    }

    /// Seeds after an optional single-seed override.
    pub fn seeds(&self, seed_override: Option<u64>) -> Vec<u64> {
        seed_override.map_or_else(|| self.run.seeds.clone(), |s| vec![s])
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const GRID: &str = r#"{
        "name": "tiny",
        "environment": {"grid": {
            "width": 3, "height": 3, "start_cells": [[0, 1]], "goal_cell": [2, 1],
            "hazard_cells": [[1, 1]], "pit_cells": [], "slip_prob": 0.0,
            "step_reward": 0.0, "goal_reward": 1.0, "max_steps": 10}},
        "method": "suppression_recovery",
        "suppression": {"kappa": 3.0, "weights": [0.1, 0.1], "epsilon": [0.5, 0.5], "policy_lr": 0.01},
        "recovery": {"weights": [1.0, 1.0], "kappa": 3.0, "lr": 0.01},
        "critic": {"train": {"method": "td0", "learning_rate": 0.2, "batch_size": 1, "target_update": "none"}},
        "run": {"seeds": [0, 1], "iterations": 3, "episodes_per_iteration": 2, "horizon": 10,
                "gamma": 0.9, "constraint_gammas": [0.9, 0.9]}
    }"#;

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = ExperimentConfig::from_json(GRID).unwrap();
        assert_eq!(cfg.method, Method::SuppressionRecovery);
        assert_eq!(cfg.run.action_samples, 1);
        assert_eq!(cfg.output.dir, PathBuf::from("runs"));
        assert_eq!(cfg.oracle_check.horizon, 3);
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_reports_its_path() {
        let text = GRID.replace("\"policy_lr\"", "\"polcy_lr\"");
        match ExperimentConfig::from_json(&text) {
            Err(HarnessError::Config { path, .. }) => assert!(path.starts_with("suppression"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn plus_spelling_of_combined_method() {
        let text = GRID.replace("\"suppression_recovery\"", "\"suppression+recovery\"");
        assert_eq!(
            ExperimentConfig::from_json(&text).unwrap().method,
            Method::SuppressionRecovery
        );
    }

    #[test]
    fn missing_recovery_section_rejected() {
        let text = GRID.replace(r#""recovery": {"weights": [1.0, 1.0], "kappa": 3.0, "lr": 0.01},"#, "");
        assert!(matches!(
            ExperimentConfig::from_json(&text),
            Err(HarnessError::Config { path, .. }) if path == "recovery"
        ));
        let rp = text.replace("\"suppression_recovery\"", "\"reward_penalty\"");
        assert!(ExperimentConfig::from_json(&rp).is_ok());
    }

    #[test]
    fn empty_seed_list_rejected() {
        let text = GRID.replace("\"seeds\": [0, 1]", "\"seeds\": []");
        assert!(matches!(
            ExperimentConfig::from_json(&text),
            Err(HarnessError::Config { path, .. }) if path == "run.seeds"
        ));
    }

    #[test]
    fn invalid_environment_rejected() {
        let text = GRID.replace("\"goal_cell\": [2, 1]", "\"goal_cell\": [1, 1]");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn seed_override_replaces_list() {
        let cfg = ExperimentConfig::from_json(GRID).unwrap();
        assert_eq!(cfg.seeds(None), vec![0, 1]);
        assert_eq!(cfg.seeds(Some(7)), vec![7]);
    }
}
