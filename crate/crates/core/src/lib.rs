//! Thompson Variable Selection: a combinatorial Beta-Bernoulli bandit for
//! variable selection, with data generators, feedback rules and regret tools.
//!
//! Each variable is an arm with a `Beta(a, b)` posterior on its probability
//! of being useful. Every iteration draws from those posteriors, plays the
//! subset whose draws clear the cost threshold, asks a feedback rule which
//! played variables were used, and updates the posteriors. The selected model
//! is the set of arms whose posterior mean clears the same threshold.

pub mod analysis;
pub mod arms;
pub mod beta;
pub mod config;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod feedback;
pub mod replicate;

pub use arms::{
    expected_reward, expected_reward_setdep, global_reward, golden_cost, oracle_constrained, oracle_unconstrained,
    ArmCosts, ArmState, BanditState, CostModel, CostParams, RewardVector, SuperArm,
};
pub use config::{execute, RunConfig, RunOutput};
pub use datagen::{Dataset, Setup};
pub use engine::{extract_model, run_offline, run_online, EngineParams, RunRecord};
pub use error::{Result, TvsError};
pub use feedback::{DataContext, FeedbackRule};
