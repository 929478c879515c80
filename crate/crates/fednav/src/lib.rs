//! Federated lifelong reinforcement learning for 2D lidar navigation.
//!
//! Agents train private Q-networks in their own simulated environments, a
//! cloud registry fuses uploaded models into successive shared-model
//! generations by entropy-weighted knowledge distillation, and new agents
//! bootstrap from the shared model by parameter warm-start or frozen
//! feature-extraction transfer.
//!
//! Module map:
//! - [`nn`]: dense feedforward networks with SGD training and a gradient
//!   check.
//! - [`env`]: the 2D raycast-lidar navigation world.
//! - [`agent`]: DQN training, evaluation, and episode logging.
//! - [`fusion`]: synthetic-sample labeling and shared-model distillation.
//! - [`transfer`]: warm-start and feature-extractor bootstrapping.
//! - [`cloud`]: model registry, wire format, TCP server and client.
//! - [`harness`]: experiment plans, comparison runs, CSV/plot artifacts.

pub mod agent;
pub mod cloud;
pub mod env;
pub mod fusion;
pub mod harness;
pub mod nn;
pub mod transfer;
