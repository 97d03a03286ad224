use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Architecture};
use crate::seed::Rng;
use crate::types::{Action, ActionSpace, Transition};

use super::{Agent, AgentConfig, Decision, PolicyView, UpdateLoss};

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub gamma: f64,
    pub target_sync: u64,
}

impl From<&AgentConfig> for DqnConfig {
    fn from(c: &AgentConfig) -> Self {
        Self {
            hidden: c.hidden.clone(),
            learning_rate: c.learning_rate,
            adam_eps: c.adam_eps,
            gamma: c.gamma,
            target_sync: c.target_sync,
        }
    }
}

/// Q-learning with a periodically copied target network.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    arch: Architecture,
    online: Vec<f64>,
    target: Vec<f64>,
    adam: AdamState,
    gamma: f64,
    target_sync: u64,
    updates: u64,
    grads: Vec<f64>,
}

/// `reward + bonus`, plus `γ · max_a Q_target(next, a)` unless `terminal`.
pub fn td_target(
    arch: &Architecture,
    target_params: &[f64],
    gamma: f64,
    reward: f64,
    bonus: f64,
    next_state: &[f64],
    terminal: bool,
) -> Result<f64> {
    if terminal || gamma == 0.0 {
        return Ok(reward + bonus);
    }
    let q = arch.output(target_params, next_state)?;
    Ok(reward + bonus + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl DqnAgent {
    pub fn new(env: &EnvironmentSpec, config: DqnConfig, rng: &mut Rng) -> Result<Self> {
        let ActionSpace::Discrete(n_actions) = env.action_space else {
            return Err(Error::Config(format!("dqn_lite needs a discrete action space; {} is continuous", env.id)));
        };
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::Config(format!("discount must lie in [0, 1), got {}", config.gamma)));
        }
        if config.target_sync == 0 {
            return Err(Error::Config("target sync period must be positive".into()));
        }
        let mut sizes = vec![env.state_dim];
        sizes.extend(&config.hidden);
        sizes.push(n_actions);
        let arch = Architecture::new(&sizes)?;
        let online = arch.init(rng);
        Ok(Self {
            target: online.clone(),
            adam: AdamState::new(online.len(), config.learning_rate, config.adam_eps),
            grads: vec![0.0; online.len()],
            online,
            arch,
            gamma: config.gamma,
            target_sync: config.target_sync,
            updates: 0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.online
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.online
    }

    pub fn target_params(&self) -> &[f64] {
        &self.target
    }

    /// Copy online parameters into the target network now.
    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.online);
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Greedy action of the network with parameters `params`.
    pub fn select_action(&self, params: &[f64], state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.arch.output(params, state)?))
    }

    pub fn td_target(&self, reward: f64, bonus: f64, next_state: &[f64], terminal: bool) -> Result<f64> {
        td_target(&self.arch, &self.target, self.gamma, reward, bonus, next_state, terminal)
    }

    /// Mean squared TD error on `batch` at the current parameters.
    pub fn loss(&self, batch: &[&Transition], bonuses: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (t, b) in batch.iter().zip(bonuses) {
            let y = self.td_target(t.reward, *b, &t.next_state, t.terminal)?;
            let a = t.action.as_discrete().ok_or_else(|| Error::Argument("continuous action in DQN batch".into()))?;
            let q = self.arch.output(&self.online, &t.state)?[a];
            total += (q - y) * (q - y);
        }
        Ok(total / batch.len() as f64)
    }
}

impl Agent for DqnAgent {
    fn id(&self) -> &'static str {
        "dqn_lite"
    }

    fn online_params(&self) -> Vec<f64> {
        self.online.clone()
    }

    fn act(&self, params: &[f64], state: &[f64], _rng: &mut Rng) -> Result<Action> {
        Ok(Action::Discrete(self.select_action(params, state)?))
    }

    fn view(&self, params: &[f64], state: &[f64]) -> Result<PolicyView> {
        let f = self.arch.forward(params, state)?;
        Ok(PolicyView { decision: Decision::Greedy(argmax(&f.output)), feature: f.feature })
    }

    fn update(&mut self, batch: &[&Transition], bonuses: &[f64], _rng: &mut Rng) -> Result<UpdateLoss> {
        if batch.is_empty() {
            return Err(Error::Argument("empty training batch".into()));
        }
        if bonuses.len() != batch.len() {
            return Err(Error::Argument("one bonus per transition required".into()));
        }
        self.grads.iter_mut().for_each(|g| *g = 0.0);
        let scale = 2.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut out_grad = vec![0.0; self.arch.output_dim()];
        for (t, bonus) in batch.iter().zip(bonuses) {
            let a = t.action.as_discrete().ok_or_else(|| Error::Argument("continuous action in DQN batch".into()))?;
            let y = self.td_target(t.reward, *bonus, &t.next_state, t.terminal)?;
            let trace = self.arch.trace(&self.online, &t.state)?;
            let err = trace.output()[a] - y;
            loss += err * err;
            out_grad.iter_mut().for_each(|g| *g = 0.0);
            out_grad[a] = scale * err;
            self.arch.backward(&self.online, &trace, &out_grad, &mut self.grads)?;
        }
        loss /= batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::numerical(format!("non-finite TD loss {loss}")));
        }
        self.adam.step(&mut self.online, &self.grads)?;
        if let Some(i) = self.online.iter().position(|p| !p.is_finite()) {
            return Err(Error::numerical(format!("online parameter {i} became non-finite")));
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.target_sync) {
            self.sync_target();
        }
        Ok(UpdateLoss { q_loss: loss, actor_loss: None })
    }

    fn uses_exploration_bonus(&self) -> bool {
        true
    }
}
