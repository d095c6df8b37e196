//! Parameterized policies and critics with exact gradients.

pub mod checkpoint;
pub mod critic;
pub mod finite_diff;
pub mod mlp;
pub mod optim;
pub mod param;
pub mod policy;

pub use checkpoint::{Checkpoint, ParamRecord};
pub use critic::{critic_eval, critic_grad, ActionFeatures, CriticRole, CriticSet, MlpQ, QFunction, TabularQ};
pub use finite_diff::finite_diff_check;
pub use mlp::Mlp;
pub use optim::{Optimizer, OptimizerKind};
pub use param::{Block, Layout, ParamVector};
pub use policy::{MlpCategorical, Policy, PolicyFamily, SquashedGaussian, TabularSoftmax};

/// `log π(s, a)`; see [`Policy::log_prob`].
pub fn policy_log_prob<P: Policy>(policy: &P, obs: &P::Obs, action: &P::Action) -> crate::Result<f64> {
    policy.log_prob(obs, action)
}

/// `∇_θ log π(s, a)`; see [`Policy::log_prob_grad`].
pub fn policy_log_prob_grad<P: Policy>(policy: &P, obs: &P::Obs, action: &P::Action) -> crate::Result<ParamVector> {
    policy.log_prob_grad(obs, action)
}
