//! The deployed/online training loop.
//!
//! Every step the deployed snapshot picks an action and the transition is
//! stored. After warmup, every `update_period` steps the online parameters
//! take `gradient_steps` optimizer steps and the criterion is consulted; a
//! positive answer replaces the deployed snapshot with the online parameters.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agents::{self, exploration_bonus, Agent, AgentConfig};
use crate::criteria::{self, Criterion, CriterionSpec, DecisionContext, StepInfo};
use crate::envs::{self, Environment};
use crate::error::{Error, Result};
use crate::hashing::{self, HashedCounter, RandomProjection};
use crate::seed::{self, Rng};
use crate::types::{Action, ActionSpace, EpisodeSummary, PolicySnapshot, ReplayBuffer, RunRecord, Transition};

/// Count-bonus scale used when none is given.
pub const DEFAULT_BETA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: String,
    pub agent: String,
    pub criterion: CriterionSpec,
    pub total_steps: usize,
    pub seed: u64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub update_period: usize,
    /// Optimizer steps per update event.
    pub gradient_steps: usize,
    pub warmup: usize,
    pub beta: f64,
    pub learning_rate: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    /// DQN target copy period in environment steps (rounded down to whole
    /// update events, at least one).
    pub target_period: usize,
    /// Recent transitions the criteria sample comparison states from.
    pub check_window: usize,
    pub check_batch: usize,
}

impl RunConfig {
    /// Defaults for `agent`: every 4 steps two optimizer steps on 32
    /// transitions for `dqn_lite`, every 50 steps 50 steps on 128 transitions
    /// for `sac_lite`. Warmup is 5000 random steps.
    pub fn new(env: &str, agent: &str, criterion: CriterionSpec, total_steps: usize, seed: u64) -> Self {
        let sac = agent == "sac_lite";
        Self {
            env: env.to_string(),
            agent: agent.to_string(),
            criterion,
            total_steps,
            seed,
            gamma: 0.99,
            buffer_capacity: 50_000,
            batch_size: if sac { 128 } else { 32 },
            update_period: if sac { 50 } else { 4 },
            gradient_steps: if sac { 50 } else { 2 },
            warmup: 5000,
            beta: DEFAULT_BETA,
            learning_rate: None,
            hidden: None,
            target_period: 200,
            check_window: criteria::DEFAULT_CHECK_WINDOW,
            check_batch: criteria::DEFAULT_CHECK_BATCH,
        }
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !envs::ENV_IDS.contains(&self.env.as_str()) {
            p.push(format!("unknown env '{}' (valid: {})", self.env, envs::ENV_IDS.join(", ")));
        }
        if !agents::AGENT_IDS.contains(&self.agent.as_str()) {
            p.push(format!("unknown agent '{}' (valid: {})", self.agent, agents::AGENT_IDS.join(", ")));
        }
        if self.total_steps <= self.warmup {
            p.push(format!("total_steps ({}) must exceed warmup ({})", self.total_steps, self.warmup));
        }
        for (name, v) in [
            ("update_period", self.update_period),
            ("target_period", self.target_period),
            ("gradient_steps", self.gradient_steps),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("check_window", self.check_window),
            ("check_batch", self.check_batch),
        ] {
            if v == 0 {
                p.push(format!("{name} must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            p.push(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            p.push(format!("beta must be nonnegative, got {}", self.beta));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                p.push(format!("learning_rate must be positive, got {lr}"));
            }
        }
        if self.hidden.as_ref().is_some_and(|h| h.is_empty() || h.contains(&0)) {
            p.push("hidden layer sizes must be positive and nonempty".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    /// Number of update events in a run: `⌊(K − warmup) / update_period⌋`.
    pub fn update_events(&self) -> usize {
        (self.total_steps - self.warmup) / self.update_period
    }

    pub fn agent_config(&self, env: &envs::EnvironmentSpec) -> AgentConfig {
        let mut c = AgentConfig::defaults(&self.agent, env);
        c.gamma = self.gamma;
        if let Some(lr) = self.learning_rate {
            c.learning_rate = lr;
        }
        if let Some(h) = &self.hidden {
            c.hidden = h.clone();
        }
        c.target_sync = (self.target_period / self.update_period).max(1) as u64;
        c
    }
}

/// Build the environment, agent and criterion named by `config` and train.
pub fn run(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let mut env = envs::make_env(&config.env)?;
    let spec = env.spec().clone();
    let mut agent = agents::make_agent(
        &config.agent,
        &spec,
        &config.agent_config(&spec),
        &mut seed::rng(config.seed, seed::STREAM_INIT),
    )?;
    let mut criterion = criteria::build_criterion(
        &config.criterion,
        spec.state_dim,
        &spec.action_space,
        spec.max_episode_len,
        config.seed,
    )?;
    run_training(config, env.as_mut(), agent.as_mut(), criterion.as_mut())
}

fn random_action(space: &ActionSpace, rng: &mut Rng) -> Action {
    match space {
        ActionSpace::Discrete(n) => Action::Discrete(rng.random_range(0..*n)),
        ActionSpace::Continuous { low, high } => {
            Action::Continuous(low.iter().zip(high).map(|(l, h)| rng.random_range(*l..=*h)).collect())
        }
    }
}

/// Run `config.total_steps` environment steps. Actions during warmup are
/// uniform; afterwards the deployed snapshot (initially the agent's initial
/// parameters, version 0) picks them.
pub fn run_training(
    config: &RunConfig,
    env: &mut dyn Environment,
    agent: &mut dyn Agent,
    criterion: &mut dyn Criterion,
) -> Result<RunRecord> {
    config.validate()?;
    let spec = env.spec().clone();
    let mut env_rng = seed::rng(config.seed, seed::STREAM_ENV);
    let mut act_rng = seed::rng(config.seed, seed::STREAM_ACTION);
    let mut replay_rng = seed::rng(config.seed, seed::STREAM_REPLAY);
    let mut check_rng = seed::rng(config.seed, seed::STREAM_CRITERION_BATCH);

    let use_bonus = agent.uses_exploration_bonus() && config.beta > 0.0;
    let mut counter = HashedCounter::new(RandomProjection::seeded(
        hashing::DEFAULT_COUNT_DIM,
        spec.state_dim,
        config.seed,
        seed::STREAM_EXPLORATION_HASH,
    )?);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut deployed = PolicySnapshot::new(&agent.online_params(), 0, 0);

    let mut state = env.reset(&mut env_rng);
    if state.len() != spec.state_dim {
        return Err(Error::Config(format!(
            "environment produced a {}-dim state, declared {}",
            state.len(),
            spec.state_dim
        )));
    }
    agent
        .view(deployed.params(), &state)
        .map_err(|e| Error::Config(format!("agent '{}' does not fit environment '{}': {e}", agent.id(), spec.id)))?;
    if use_bonus {
        counter.observe(&state, None)?;
    }

    let k_total = config.total_steps;
    let mut record = RunRecord {
        total_steps: k_total,
        step_rewards: Vec::with_capacity(k_total),
        episodes: Vec::new(),
        switch_steps: Vec::new(),
        deployed_versions: Vec::with_capacity(k_total),
        switching_cost: 0,
        final_version: 0,
    };
    let (mut episode_return, mut episode_len) = (0.0, 0usize);
    let mut reset_since_check = false;
    let mut last_switch = 0usize;

    for k in 0..k_total {
        let action = if k < config.warmup {
            random_action(&spec.action_space, &mut act_rng)
        } else {
            agent.act(deployed.params(), &state, &mut act_rng).map_err(|e| e.at_step(k))?
        };
        record.deployed_versions.push(deployed.version);
        let out = env.step(&action)?;
        if !out.reward.is_finite() || out.next_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("environment produced a non-finite value").at_step(k));
        }
        criterion
            .observe(&StepInfo {
                state: &state,
                action: &action,
                episode_step: episode_len,
                action_space: &spec.action_space,
            })
            .map_err(|e| e.at_step(k))?;
        if use_bonus {
            counter.observe(&out.next_state, None)?;
        }
        record.step_rewards.push(out.reward);
        episode_return += out.reward;
        episode_len += 1;
        let done = out.done();
        let next_state = out.next_state;
        buffer.push(Transition {
            state: std::mem::take(&mut state),
            action,
            reward: out.reward,
            next_state: next_state.clone(),
            terminal: out.terminal,
            step_index: k,
        });
        if done {
            record.episodes.push(EpisodeSummary { end_step: k, length: episode_len, episode_return });
            episode_return = 0.0;
            episode_len = 0;
            reset_since_check = true;
            state = env.reset(&mut env_rng);
            if use_bonus {
                counter.observe(&state, None)?;
            }
        } else {
            state = next_state;
        }

        let t = k + 1;
        if t <= config.warmup || !(t - config.warmup).is_multiple_of(config.update_period) {
            continue;
        }
        for _ in 0..config.gradient_steps {
            let batch = buffer.sample_recent(buffer.len(), config.batch_size, &mut replay_rng)?;
            let bonuses = if use_bonus {
                batch
                    .iter()
                    .map(|tr| exploration_bonus(&counter, &tr.next_state, config.beta))
                    .collect::<Result<Vec<_>>>()?
            } else {
                vec![0.0; batch.len()]
            };
            let loss = agent.update(&batch, &bonuses, &mut replay_rng).map_err(|e| e.at_step(k))?;
            if !loss.q_loss.is_finite() || loss.actor_loss.is_some_and(|l| !l.is_finite()) {
                return Err(Error::numerical("non-finite loss").at_step(k));
            }
        }
        let online = agent.online_params();
        if online.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite online parameter").at_step(k));
        }
        let mut ctx = DecisionContext {
            step: t,
            episode_reset: reset_since_check,
            steps_since_switch: t - last_switch,
            agent: &*agent,
            deployed: &deployed,
            buffer: &buffer,
            rng: &mut check_rng,
            check_window: config.check_window,
            check_batch: config.check_batch,
        };
        let fire = criterion.decide(&mut ctx).map_err(|e| e.at_step(k))?;
        reset_since_check = false;
        if fire {
            deployed = deployed.successor(&online, t);
            record.switch_steps.push(k);
            last_switch = t;
        }
    }
    record.switching_cost = record.switch_steps.len();
    record.final_version = deployed.version;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::switching_cost;

    fn short(criterion: &str, env: &str, agent: &str, k: usize, warmup: usize, period: usize) -> RunConfig {
        let mut c = RunConfig::new(env, agent, criterion.parse().unwrap(), k, 7);
        c.warmup = warmup;
        c.update_period = period;
        c.hidden = Some(vec![16]);
        c.check_batch = 32;
        if agent == "sac_lite" {
            c.gradient_steps = 2;
            c.batch_size = 16;
        }
        c
    }

    #[test]
    fn never_keeps_initial_snapshot() {
        let r = run(&short("never", "gridworld5", "dqn_lite", 600, 100, 4)).unwrap();
        assert_eq!(r.switching_cost, 0);
        assert!(r.deployed_versions.iter().all(|v| *v == 0));
        assert_eq!(r.final_version, 0);
        assert_eq!(r.step_rewards.len(), 600);
    }

    #[test]
    fn none_switches_at_every_update() {
        for (k, w, p) in [(600, 100, 4), (601, 100, 4), (603, 100, 7), (300, 0, 1)] {
            let c = short("none", "chain10", "dqn_lite", k, w, p);
            let r = run(&c).unwrap();
            assert_eq!(r.switching_cost, (k - w) / p);
            assert_eq!(r.switching_cost, c.update_events());
            assert_eq!(switching_cost(&r), r.switching_cost);
        }
    }

    #[test]
    fn fix_switch_count() {
        let r = run(&short("fix:n=100", "gridworld5", "dqn_lite", 2000, 100, 4)).unwrap();
        // multiples of 100 in (100, 2000]
        assert_eq!(r.switching_cost, 19);
        assert!(r.switch_steps.iter().all(|k| (k + 1) % 100 == 0));
    }

    #[test]
    fn deployed_purity_and_ordering() {
        for crit in ["none", "fix:n=200", "feature:force=300", "policy", "visitation", "info"] {
            let r = run(&short(crit, "gridworld5", "dqn_lite", 1500, 200, 4)).unwrap();
            assert!(r.switch_steps.windows(2).all(|w| w[0] < w[1]), "{crit}");
            assert!(r.switch_steps.iter().all(|k| *k < r.total_steps));
            assert_eq!(switching_cost(&r), r.switching_cost, "{crit}");
            let mut next = r.switch_steps.iter().peekable();
            let mut version = 0;
            for (k, v) in r.deployed_versions.iter().enumerate() {
                assert_eq!(*v, version, "{crit} at step {k}");
                if next.peek() == Some(&&k) {
                    next.next();
                    version += 1;
                }
            }
            assert_eq!(r.final_version as usize, r.switching_cost);
        }
    }

    #[test]
    fn reproducible() {
        for (crit, env, agent) in [("feature", "cartpole_lite", "dqn_lite"), ("policy", "pendulum_lite", "sac_lite")] {
            let c = short(crit, env, agent, 700, 200, 10);
            assert_eq!(run(&c).unwrap(), run(&c).unwrap());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = short("none", "gridworld5", "dqn_lite", 100, 100, 4);
        c.update_period = 0;
        c.env = "mars".into();
        let problems = c.problems();
        assert_eq!(problems.len(), 3, "{problems:?}");
        assert!(matches!(run(&c), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_names_the_step() {
        let mut c = short("none", "gridworld5", "dqn_lite", 400, 100, 4);
        c.learning_rate = Some(1e300);
        match run(&c) {
            Err(Error::Numerical { step: Some(k), .. }) => assert!((100..400).contains(&k)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
