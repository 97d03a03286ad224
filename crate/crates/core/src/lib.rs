//! Low-switching-cost reinforcement learning.
//!
//! An agent keeps two parameter sets: the *online* parameters, trained
//! continuously from replayed experience, and a frozen *deployed* snapshot
//! that alone chooses actions in the environment. A switching criterion
//! decides when the deployed snapshot is replaced by the online parameters;
//! every replacement is one unit of switching cost.
//!
//! Modules:
//!
//! - [`envs`]: small seedable environments (grid world, chain, cart-pole, pendulum).
//! - [`nn`]: MLPs with manual reverse-mode gradients and Adam.
//! - [`agents`]: DQN-style and SAC-style learners.
//! - [`hashing`]: random-projection sign hashing and visitation counts.
//! - [`criteria`]: deployment criteria.
//! - [`metrics`]: switching cost, RSI, Welch's t-test, multi-seed aggregation.
//! - [`train`]: the deployed/online training loop.

pub mod agents;
pub mod criteria;
pub mod envs;
pub mod error;
pub mod hashing;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{Action, ActionSpace, EpisodeSummary, PolicySnapshot, ReplayBuffer, RunRecord, Transition};
