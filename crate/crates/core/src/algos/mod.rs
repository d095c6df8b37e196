//! Policy-gradient estimators for multi-constraint safe RL.

pub mod gradients;
pub mod proxy;
pub mod safety;
pub mod trainer;

pub use gradients::{
    hard_switch_gradient, reward_penalty_gradient, score_gradient, soft_switch_gradient, steps_as_batch,
    suppression_gradient, suppression_gradient_ratio_form, task_policy_gradient, Sample, SwitchSample,
};
pub use proxy::{proxy_no_risk_prob, proxy_risk_prob, suppression_weights, SuppressionConfig};
pub use safety::{recovery_gradient, safety_layer_select, train_recovery_policy, RecoveryConfig, SafetyLayer};
pub use trainer::{EvalSummary, IterationMetrics, Method, Trainer, TrainerConfig};
