use std::f64::consts::{LN_2, PI};

use rand_distr::{Distribution, StandardNormal};

use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Architecture};
use crate::seed::Rng;
use crate::types::{Action, ActionSpace, Transition};

use super::{Agent, AgentConfig, Decision, PolicyView, UpdateLoss};

/// Bounds applied to the actor's log standard deviation.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
}

impl From<&AgentConfig> for SacConfig {
    fn from(c: &AgentConfig) -> Self {
        Self {
            hidden: c.hidden.clone(),
            learning_rate: c.learning_rate,
            adam_eps: c.adam_eps,
            gamma: c.gamma,
            tau: c.tau,
            alpha: c.alpha,
        }
    }
}

/// Entropy-regularized actor-critic with a tanh-squashed diagonal Gaussian actor.
///
/// A deployed parameter vector is the Q-network parameters followed by the
/// actor parameters.
#[derive(Debug, Clone)]
pub struct SacAgent {
    q_arch: Architecture,
    actor_arch: Architecture,
    q: Vec<f64>,
    q_target: Vec<f64>,
    actor: Vec<f64>,
    q_adam: AdamState,
    actor_adam: AdamState,
    gamma: f64,
    tau: f64,
    pub alpha: f64,
    center: Vec<f64>,
    half_range: Vec<f64>,
}

/// A reparameterized draw from the actor.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Pre-squash sample `μ + σ·ε`.
    pub pre_squash: Vec<f64>,
    pub mean: Vec<f64>,
    /// Clamped log standard deviation.
    pub log_std: Vec<f64>,
}

/// `ln(1 − tanh²(u))` without cancellation.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let z = -2.0 * u;
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    2.0 * (LN_2 - u - softplus)
}

impl SacAgent {
    pub fn new(env: &EnvironmentSpec, config: SacConfig, rng: &mut Rng) -> Result<Self> {
        let ActionSpace::Continuous { low, high } = &env.action_space else {
            return Err(Error::Config(format!("sac_lite needs a continuous action space; {} is discrete", env.id)));
        };
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::Config(format!("discount must lie in [0, 1), got {}", config.gamma)));
        }
        if !(0.0 < config.tau && config.tau <= 1.0) {
            return Err(Error::Config(format!("smoothing coefficient must lie in (0, 1], got {}", config.tau)));
        }
        if config.alpha < 0.0 {
            return Err(Error::Config("entropy temperature must be nonnegative".into()));
        }
        let a = low.len();
        let mut q_sizes = vec![env.state_dim + a];
        q_sizes.extend(&config.hidden);
        q_sizes.push(1);
        let mut actor_sizes = vec![env.state_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(2 * a);
        let q_arch = Architecture::new(&q_sizes)?;
        let actor_arch = Architecture::new(&actor_sizes)?;
        let q = q_arch.init(rng);
        let actor = actor_arch.init(rng);
        Ok(Self {
            q_adam: AdamState::new(q.len(), config.learning_rate, config.adam_eps),
            actor_adam: AdamState::new(actor.len(), config.learning_rate, config.adam_eps),
            q_target: q.clone(),
            q,
            actor,
            q_arch,
            actor_arch,
            gamma: config.gamma,
            tau: config.tau,
            alpha: config.alpha,
            center: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            half_range: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.center.len()
    }

    pub fn q_architecture(&self) -> &Architecture {
        &self.q_arch
    }

    pub fn actor_architecture(&self) -> &Architecture {
        &self.actor_arch
    }

    pub fn q_params(&self) -> &[f64] {
        &self.q
    }

    pub fn q_params_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }

    pub fn actor_params(&self) -> &[f64] {
        &self.actor
    }

    pub fn actor_params_mut(&mut self) -> &mut [f64] {
        &mut self.actor
    }

    pub fn q_target_params(&self) -> &[f64] {
        &self.q_target
    }

    /// Split a deployed vector into (Q, actor) parameters.
    pub fn split<'a>(&self, params: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        let nq = self.q_arch.param_count();
        if params.len() != nq + self.actor_arch.param_count() {
            return Err(Error::Argument("snapshot length does not match the SAC architecture".into()));
        }
        Ok(params.split_at(nq))
    }

    fn squash(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, u)| {
                let a = self.center[i] + self.half_range[i] * u.tanh();
                a.clamp(self.center[i] - self.half_range[i], self.center[i] + self.half_range[i])
            })
            .collect()
    }

    /// Mean and clamped log-std of the actor at `state`.
    pub fn gaussian(&self, actor: &[f64], state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.actor_arch.output(actor, state)?;
        let a = self.action_dim();
        let mean = out[..a].to_vec();
        let log_std = out[a..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok((mean, log_std))
    }

    /// Squashed action for pre-squash noise `noise` (all zeros gives the mean action).
    pub fn sample_with_noise(&self, actor: &[f64], state: &[f64], noise: &[f64]) -> Result<SampledAction> {
        let (mean, log_std) = self.gaussian(actor, state)?;
        if noise.len() != mean.len() {
            return Err(Error::Argument("noise dimension does not match action dimension".into()));
        }
        let pre_squash: Vec<f64> = (0..mean.len()).map(|i| mean[i] + log_std[i].exp() * noise[i]).collect();
        let log_prob = (0..mean.len())
            .map(|i| {
                -0.5 * noise[i] * noise[i]
                    - log_std[i]
                    - 0.5 * (2.0 * PI).ln()
                    - self.half_range[i].ln()
                    - log_one_minus_tanh_sq(pre_squash[i])
            })
            .sum();
        Ok(SampledAction { action: self.squash(&pre_squash), log_prob, pre_squash, mean, log_std })
    }

    pub fn sample(&self, actor: &[f64], state: &[f64], rng: &mut Rng) -> Result<SampledAction> {
        let noise: Vec<f64> = (0..self.action_dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.sample_with_noise(actor, state, &noise)
    }

    /// Squashed mean action.
    pub fn mean_action(&self, actor: &[f64], state: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.gaussian(actor, state)?;
        Ok(self.squash(&mean))
    }

    fn q_value(&self, q: &[f64], state: &[f64], action: &[f64]) -> Result<f64> {
        let mut input = state.to_vec();
        input.extend_from_slice(action);
        Ok(self.q_arch.output(q, &input)?[0])
    }

    /// `r + γ (Q_target(x', a') − α log π(a'|x'))` with `a' = squash(μ + σ·noise)`;
    /// just `r` at terminal transitions.
    pub fn q_target_with_noise(&self, reward: f64, next_state: &[f64], terminal: bool, noise: &[f64]) -> Result<f64> {
        if terminal {
            return Ok(reward);
        }
        let s = self.sample_with_noise(&self.actor, next_state, noise)?;
        let q = self.q_value(&self.q_target, next_state, &s.action)?;
        Ok(reward + self.gamma * (q - self.alpha * s.log_prob))
    }

    pub fn q_target(&self, reward: f64, next_state: &[f64], terminal: bool, rng: &mut Rng) -> Result<f64> {
        let noise: Vec<f64> = (0..self.action_dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.q_target_with_noise(reward, next_state, terminal, &noise)
    }

    /// Actor objective `mean(α log π(a|x) − Q(x, a))` and its gradient with
    /// respect to `actor`, with `a` reparameterized through fixed `noises`.
    pub fn actor_loss_and_grad(
        &self,
        actor: &[f64],
        states: &[&[f64]],
        noises: &[Vec<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        let n_act = self.action_dim();
        let mut grads = vec![0.0; actor.len()];
        let mut q_grads_scratch = vec![0.0; self.q.len()];
        let mut loss = 0.0;
        let inv = 1.0 / states.len() as f64;
        for (state, noise) in states.iter().zip(noises) {
            let trace = self.actor_arch.trace(actor, state)?;
            let out = trace.output();
            let s = self.sample_with_noise(actor, state, noise)?;
            let mut q_input = state.to_vec();
            q_input.extend_from_slice(&s.action);
            let q_trace = self.q_arch.trace(&self.q, &q_input)?;
            let q = q_trace.output()[0];
            loss += (self.alpha * s.log_prob - q) * inv;
            // dQ/da through the critic; its parameter gradient is discarded
            let dq_dinput = self.q_arch.backward(&self.q, &q_trace, &[1.0], &mut q_grads_scratch)?;
            let mut out_grad = vec![0.0; 2 * n_act];
            for i in 0..n_act {
                let t = s.pre_squash[i].tanh();
                let sigma = s.log_std[i].exp();
                let dq_du = dq_dinput[state.len() + i] * self.half_range[i] * (1.0 - t * t);
                // d log π / dμ = 2 tanh(u); d log π / d log σ = −1 + 2 tanh(u) σ ε
                out_grad[i] = inv * (self.alpha * 2.0 * t - dq_du);
                let raw = out[n_act + i];
                if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                    out_grad[n_act + i] =
                        inv * (self.alpha * (-1.0 + 2.0 * t * sigma * noise[i]) - dq_du * sigma * noise[i]);
                }
            }
            self.actor_arch.backward(actor, &trace, &out_grad, &mut grads)?;
        }
        Ok((loss, grads))
    }

    fn soft_update(&mut self) {
        let tau = self.tau;
        for (t, p) in self.q_target.iter_mut().zip(&self.q) {
            *t = tau * p + (1.0 - tau) * *t;
        }
    }
}

impl Agent for SacAgent {
    fn id(&self) -> &'static str {
        "sac_lite"
    }

    fn online_params(&self) -> Vec<f64> {
        let mut p = self.q.clone();
        p.extend_from_slice(&self.actor);
        p
    }

    fn act(&self, params: &[f64], state: &[f64], rng: &mut Rng) -> Result<Action> {
        let (_, actor) = self.split(params)?;
        Ok(Action::Continuous(self.sample(actor, state, rng)?.action))
    }

    fn view(&self, params: &[f64], state: &[f64]) -> Result<PolicyView> {
        let (q, actor) = self.split(params)?;
        let (mean, log_std) = self.gaussian(actor, state)?;
        let mut input = state.to_vec();
        input.extend(self.squash(&mean));
        let feature = self.q_arch.forward(q, &input)?.feature;
        Ok(PolicyView { decision: Decision::Gaussian { mean, log_std }, feature })
    }

    fn update(&mut self, batch: &[&Transition], _bonuses: &[f64], rng: &mut Rng) -> Result<UpdateLoss> {
        if batch.is_empty() {
            return Err(Error::Argument("empty training batch".into()));
        }
        let inv = 1.0 / batch.len() as f64;
        let mut q_grads = vec![0.0; self.q.len()];
        let mut q_loss = 0.0;
        for t in batch {
            let action =
                t.action.as_continuous().ok_or_else(|| Error::Argument("discrete action in SAC batch".into()))?;
            let y = self.q_target(t.reward, &t.next_state, t.terminal, rng)?;
            let mut input = t.state.clone();
            input.extend_from_slice(action);
            let trace = self.q_arch.trace(&self.q, &input)?;
            let err = trace.output()[0] - y;
            q_loss += err * err * inv;
            self.q_arch.backward(&self.q, &trace, &[2.0 * err * inv], &mut q_grads)?;
        }
        if !q_loss.is_finite() {
            return Err(Error::numerical(format!("non-finite critic loss {q_loss}")));
        }
        self.q_adam.step(&mut self.q, &q_grads)?;

        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let noises: Vec<Vec<f64>> =
            batch.iter().map(|_| (0..self.action_dim()).map(|_| StandardNormal.sample(rng)).collect()).collect();
        let (actor_loss, actor_grads) = self.actor_loss_and_grad(&self.actor, &states, &noises)?;
        if !actor_loss.is_finite() {
            return Err(Error::numerical(format!("non-finite actor loss {actor_loss}")));
        }
        self.actor_adam.step(&mut self.actor, &actor_grads)?;
        self.soft_update();
        if self.q.iter().chain(&self.actor).any(|p| !p.is_finite()) {
            return Err(Error::numerical("SAC parameters became non-finite"));
        }
        Ok(UpdateLoss { q_loss, actor_loss: Some(actor_loss) })
    }

    fn uses_exploration_bonus(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_env;
    use crate::seed;
    use rand::Rng as _;

    fn agent(alpha: f64) -> SacAgent {
        let env = make_env("pendulum_lite").unwrap();
        let cfg =
            SacConfig { hidden: vec![16, 16], learning_rate: 1e-3, adam_eps: 1e-8, gamma: 0.99, tau: 0.005, alpha };
        SacAgent::new(env.spec(), cfg, &mut seed::rng(2, seed::STREAM_INIT)).unwrap()
    }

    fn random_states(n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn stable_log_term_matches_direct_formula() {
        for u in [-3.0, -0.5, 0.0, 0.2, 1.7, 4.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - direct).abs() < 1e-10);
        }
        assert!(log_one_minus_tanh_sq(40.0).is_finite());
    }

    #[test]
    fn terminal_target_is_reward() {
        let ag = agent(0.2);
        assert_eq!(ag.q_target(-1.5, &[1.0, 0.0, 0.0], true, &mut seed::rng(0, 0)).unwrap(), -1.5);
    }

    #[test]
    fn zero_temperature_zero_noise_target_uses_mean_action() {
        let ag = agent(0.0);
        let next = [0.6, 0.8, -0.3];
        let y = ag.q_target_with_noise(0.5, &next, false, &[0.0]).unwrap();
        let mean = ag.mean_action(&ag.actor, &next).unwrap();
        let q = ag.q_value(&ag.q_target, &next, &mean).unwrap();
        assert!((y - (0.5 + 0.99 * q)).abs() < 1e-12);
    }

    #[test]
    fn seeded_target_is_reproducible() {
        let ag = agent(0.2);
        let s = [0.1, 0.2, 0.3];
        let a = ag.q_target(0.0, &s, false, &mut seed::rng(5, 0)).unwrap();
        let b = ag.q_target(0.0, &s, false, &mut seed::rng(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_actions_are_bounded_with_finite_log_prob() {
        let mut ag = agent(0.2);
        // Push the mean far out so squashing saturates.
        let n = ag.actor.len();
        ag.actor[n - 2] = 50.0;
        let mut rng = seed::rng(3, 0);
        for s in random_states(64, &mut rng) {
            let d = ag.sample(&ag.actor, &s, &mut rng).unwrap();
            assert!(d.log_prob.is_finite());
            assert!((-2.0..=2.0).contains(&d.action[0]));
            assert!(d.log_std.iter().all(|l| (LOG_STD_MIN..=LOG_STD_MAX).contains(l)));
        }
    }

    #[test]
    fn flat_objective_gives_zero_actor_gradient() {
        let mut ag = agent(0.0);
        // Zero every critic weight that reads the action input (column 3 of layer 1).
        let hidden = ag.q_arch.sizes()[1];
        for o in 0..hidden {
            ag.q[o * 4 + 3] = 0.0;
        }
        let mut rng = seed::rng(8, 0);
        let states = random_states(16, &mut rng);
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let noises: Vec<Vec<f64>> = (0..16).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let (_, g) = ag.actor_loss_and_grad(&ag.actor, &refs, &noises).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let ag = agent(0.2);
        let mut rng = seed::rng(6, 0);
        let states = random_states(4, &mut rng);
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let noises: Vec<Vec<f64>> = (0..4).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let (_, g) = ag.actor_loss_and_grad(&ag.actor, &refs, &noises).unwrap();
        let h = 1e-6;
        for i in 0..ag.actor.len() {
            let mut p = ag.actor.clone();
            p[i] += h;
            let up = ag.actor_loss_and_grad(&p, &refs, &noises).unwrap().0;
            p[i] -= 2.0 * h;
            let down = ag.actor_loss_and_grad(&p, &refs, &noises).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-3, "param {i}: analytic {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn update_reports_finite_losses_and_moves_target_slowly() {
        let mut ag = agent(0.2);
        let mut rng = seed::rng(7, 0);
        let batch: Vec<Transition> = random_states(32, &mut rng)
            .into_iter()
            .map(|s| Transition {
                next_state: s.iter().map(|v| v * 0.9).collect(),
                state: s,
                action: Action::Continuous(vec![rng.random_range(-2.0..2.0)]),
                reward: rng.random_range(-3.0..0.0),
                terminal: false,
                step_index: 0,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let target_before = ag.q_target.clone();
        let l = ag.update(&refs, &[], &mut rng).unwrap();
        assert!(l.q_loss.is_finite() && l.actor_loss.unwrap().is_finite());
        for ((t, old), q) in ag.q_target.iter().zip(&target_before).zip(&ag.q) {
            assert!((t - (0.005 * q + 0.995 * old)).abs() < 1e-12);
        }
    }

    #[test]
    fn view_reports_gaussian_and_critic_feature() {
        let ag = agent(0.2);
        let params = ag.online_params();
        let v = ag.view(&params, &[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(v.decision, Decision::Gaussian { .. }));
        assert_eq!(v.feature.len(), 16);
        assert!(ag.view(&params[1..], &[1.0, 0.0, 0.0]).is_err());
    }
}
