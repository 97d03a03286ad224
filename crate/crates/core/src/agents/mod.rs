//! Off-policy learners.
//!
//! Every agent keeps its online parameters privately and acts with whatever
//! parameter vector it is handed, so the training loop can hold the deployed
//! snapshot separately and swap it only when a criterion fires.

mod dqn;
mod sac;

pub use dqn::{td_target, DqnAgent, DqnConfig};
pub use sac::{SacAgent, SacConfig, SampledAction};

use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::hashing::HashedCounter;
use crate::seed::Rng;
use crate::types::{Action, Transition};

/// Agent ids understood by [`make_agent`].
pub const AGENT_IDS: [&str; 2] = ["dqn_lite", "sac_lite"];

/// How a policy acts at a state, as seen by the switching criteria.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Greedy(usize),
    /// Diagonal Gaussian over the pre-squash action.
    Gaussian {
        mean: Vec<f64>,
        log_std: Vec<f64>,
    },
}

/// What a parameter vector does at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyView {
    pub decision: Decision,
    /// Final hidden layer of the Q-network.
    pub feature: Vec<f64>,
}

/// Losses reported by one update event.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateLoss {
    pub q_loss: f64,
    pub actor_loss: Option<f64>,
}

pub trait Agent: Send {
    fn id(&self) -> &'static str;

    /// Flat copy of the online parameters (everything a deployed snapshot holds).
    fn online_params(&self) -> Vec<f64>;

    /// Action used to collect data when `params` is deployed.
    fn act(&self, params: &[f64], state: &[f64], rng: &mut Rng) -> Result<Action>;

    fn view(&self, params: &[f64], state: &[f64]) -> Result<PolicyView>;

    /// One gradient step on `batch`; `bonuses[i]` is added to `batch[i]`'s reward.
    fn update(&mut self, batch: &[&Transition], bonuses: &[f64], rng: &mut Rng) -> Result<UpdateLoss>;

    /// Whether rewards should be augmented with the count-based bonus.
    fn uses_exploration_bonus(&self) -> bool;
}

/// `β / √n(φ(state))`.
pub fn exploration_bonus(counter: &HashedCounter, state: &[f64], beta: f64) -> Result<f64> {
    let n = counter.count(state, None)?;
    if n == 0 {
        return Err(Error::Protocol("exploration bonus requested for a state that was never counted".into()));
    }
    Ok(beta / (n as f64).sqrt())
}

/// Learner hyper-parameters shared by both agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub gamma: f64,
    /// DQN: hard target copy every this many updates.
    pub target_sync: u64,
    /// SAC: soft target coefficient.
    pub tau: f64,
    /// SAC: entropy temperature.
    pub alpha: f64,
}

impl AgentConfig {
    /// Defaults for `agent` on `env`.
    pub fn defaults(agent: &str, env: &EnvironmentSpec) -> Self {
        let width = match env.id.as_str() {
            "cartpole_lite" | "pendulum_lite" => 128,
            _ => 64,
        };
        match agent {
            "sac_lite" => Self {
                hidden: vec![width, width],
                learning_rate: 1e-3,
                adam_eps: 1e-8,
                gamma: 0.99,
                target_sync: 1,
                tau: 0.005,
                alpha: 0.2,
            },
            _ => Self {
                hidden: vec![width, width],
                learning_rate: 1e-3,
                adam_eps: 1.5e-4,
                gamma: 0.99,
                target_sync: 200,
                tau: 1.0,
                alpha: 0.0,
            },
        }
    }
}

/// Build agent `id` for `env`, initialized from `rng`.
pub fn make_agent(id: &str, env: &EnvironmentSpec, config: &AgentConfig, rng: &mut Rng) -> Result<Box<dyn Agent>> {
    match id {
        "dqn_lite" => Ok(Box::new(DqnAgent::new(env, DqnConfig::from(config), rng)?)),
        "sac_lite" => Ok(Box::new(SacAgent::new(env, SacConfig::from(config), rng)?)),
        other => Err(Error::Config(format!("unknown agent '{other}' (valid: {})", AGENT_IDS.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::RandomProjection;

    #[test]
    fn bonus_values() {
        let mut c = HashedCounter::new(RandomProjection::from_matrix(1, 1, vec![1.0]).unwrap());
        assert!(matches!(exploration_bonus(&c, &[1.0], 0.01), Err(Error::Protocol(_))));
        c.observe(&[1.0], None).unwrap();
        assert_eq!(exploration_bonus(&c, &[1.0], 0.01).unwrap(), 0.01);
        for _ in 0..3 {
            c.observe(&[2.0], None).unwrap();
        }
        assert_eq!(exploration_bonus(&c, &[1.0], 0.01).unwrap(), 0.005);
        assert_eq!(exploration_bonus(&c, &[1.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn agent_env_compatibility() {
        let grid = crate::envs::make_env("gridworld5").unwrap();
        let pend = crate::envs::make_env("pendulum_lite").unwrap();
        let mut rng = crate::seed::rng(0, 0);
        let cfg = AgentConfig::defaults("dqn_lite", grid.spec());
        assert!(make_agent("dqn_lite", grid.spec(), &cfg, &mut rng).is_ok());
        assert!(matches!(make_agent("dqn_lite", pend.spec(), &cfg, &mut rng), Err(Error::Config(_))));
        assert!(matches!(make_agent("sac_lite", grid.spec(), &cfg, &mut rng), Err(Error::Config(_))));
        assert!(matches!(make_agent("ppo", grid.spec(), &cfg, &mut rng), Err(Error::Config(_))));
    }
}
