//! Tabular maximum-entropy reinforcement learning with residual policy
//! customization.
//!
//! The crate solves finite MDPs that carry two reward channels: a *basic*
//! reward, for which a maximum-entropy prior policy exists, and an *add-on*
//! reward encoding extra requirements. Policy customization finds the policy
//! that is optimal for the combined objective `ω·r + r_R` while only ever
//! touching the prior policy and the add-on reward — the basic reward is
//! treated as unknown at customization time.
//!
//! Module map:
//! - [`mdp`]: the data model — MDPs, Q/policy tables, validation, sampling.
//! - [`soft`]: exact entropy-regularized solvers (the ground-truth oracle).
//! - [`residual`]: residual soft Q-iteration / Q-learning / policy iteration.
//! - [`mcts`]: maximum-entropy tree search with softmax backups, residual
//!   variant included.
//! - [`baselines`]: greedy decomposition, KL-augmented reward, and
//!   likelihood-augmented reward customization schemes.
//! - [`envs`]: four discrete benchmark tasks plus episode traces and task
//!   metrics.
//! - [`sim`]: the episodic simulator interface bridging MDPs and learners.
//! - [`harness`]: declarative experiment runner with CSV/JSON reports.
//! - [`fixtures`]: tiny MDPs used throughout the test suite.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the common `f64` case.

pub mod baselines;
pub mod envs;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod mcts;
pub mod mdp;
pub mod residual;
pub mod scalar;
pub mod sim;
pub mod soft;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64`-specialized aliases for the core data types.
pub type DiscreteMdp64 = mdp::DiscreteMdp<f64>;
pub type QTable64 = mdp::QTable<f64>;
pub type PolicyTable64 = mdp::PolicyTable<f64>;
pub type RewardSelector64 = mdp::RewardSelector<f64>;
pub type SoftSolverParams64 = soft::SoftSolverParams<f64>;
pub type CustomizationParams64 = residual::CustomizationParams<f64>;
pub type TdLearnerParams64 = residual::TdLearnerParams<f64>;
pub type ResidualQTable64 = residual::ResidualQTable<f64>;
pub type MctsParams64 = mcts::MctsParams<f64>;
pub type GreedyParams64 = baselines::GreedyParams<f64>;
pub type KlRewardParams64 = baselines::KlRewardParams<f64>;
