//! Small deterministic environments.
//!
//! | id              | state                         | actions          | H_max | reward                         |
//! |-----------------|-------------------------------|------------------|-------|--------------------------------|
//! | `gridworld5`    | one-hot of 25 cells           | 4 (up/right/down/left) | 50 | +1 on reaching (4,4), else 0 |
//! | `chain10`       | one-hot of 10 states          | 2 (left/right)   | 20    | +1 at the right end, 0.001 for "left" at state 0 |
//! | `cartpole_lite` | (x, ẋ, θ, θ̇)                 | 2 (push left/right) | 200 | +1 per surviving step, 0 on failure |
//! | `pendulum_lite` | (cos θ, sin θ, θ̇)            | torque in [−2, 2] | 200  | −(θ² + 0.1 θ̇² + 0.001 u²)     |
//!
//! Episodes end when a terminal state is reached (`terminal`) or when the
//! step limit is hit (`truncated`). Both end the episode; only `terminal`
//! stops bootstrapping.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::types::{Action, ActionSpace};

/// Environment ids understood by [`make_env`].
pub const ENV_IDS: [&str; 4] = ["gridworld5", "chain10", "cartpole_lite", "pendulum_lite"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub id: String,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub max_episode_len: usize,
    pub reward_range: (f64, f64),
}

impl EnvironmentSpec {
    /// Largest achievable undiscounted episode return.
    pub fn max_return(&self) -> f64 {
        match self.id.as_str() {
            "gridworld5" | "chain10" => 1.0,
            "cartpole_lite" => self.max_episode_len as f64,
            "pendulum_lite" => 0.0,
            _ => self.reward_range.1 * self.max_episode_len as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvironmentSpec;

    /// Start a new episode and return its initial state.
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;

    /// Advance the active episode by one action.
    fn step(&mut self, action: &Action) -> Result<StepOutcome>;

    /// Steps taken in the current episode.
    fn episode_steps(&self) -> usize;
}

/// Build an environment by id.
pub fn make_env(id: &str) -> Result<Box<dyn Environment>> {
    match id {
        "gridworld5" => Ok(Box::new(GridWorld::new(5))),
        "chain10" => Ok(Box::new(ChainMdp::new(10))),
        "cartpole_lite" => Ok(Box::new(CartPoleLite::new())),
        "pendulum_lite" => Ok(Box::new(PendulumLite::new())),
        other => Err(Error::Config(format!("unknown environment '{other}' (valid: {})", ENV_IDS.join(", ")))),
    }
}

/// Step counting and the end-of-episode protocol shared by every environment.
#[derive(Debug, Clone, Default)]
struct Episode {
    steps: usize,
    active: bool,
}

impl Episode {
    fn begin(&mut self) {
        self.steps = 0;
        self.active = true;
    }

    fn guard(&self, spec: &EnvironmentSpec, action: &Action) -> Result<()> {
        if !self.active {
            return Err(Error::Protocol(format!("{}: step called on a finished or unstarted episode", spec.id)));
        }
        spec.action_space.check(action)
    }

    /// Record one step; returns whether the step limit was reached.
    fn tick(&mut self, limit: usize, terminal: bool) -> bool {
        self.steps += 1;
        let truncated = !terminal && self.steps >= limit;
        if terminal || truncated {
            self.active = false;
        }
        truncated
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Square grid; start in the top-left corner, goal in the bottom-right corner.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: EnvironmentSpec,
    size: usize,
    row: usize,
    col: usize,
    episode: Episode,
}

impl GridWorld {
    pub const UP: usize = 0;
    pub const RIGHT: usize = 1;
    pub const DOWN: usize = 2;
    pub const LEFT: usize = 3;

    pub fn new(size: usize) -> Self {
        Self {
            spec: EnvironmentSpec {
                id: format!("gridworld{size}"),
                state_dim: size * size,
                action_space: ActionSpace::Discrete(4),
                max_episode_len: 10 * size,
                reward_range: (0.0, 1.0),
            },
            size,
            row: 0,
            col: 0,
            episode: Episode::default(),
        }
    }

    pub fn position(&self) -> (usize, usize) {
        (self.row, self.col)
    }

    fn encode(&self) -> Vec<f64> {
        one_hot(self.size * self.size, self.row * self.size + self.col)
    }
}

impl Environment for GridWorld {
    fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut Rng) -> Vec<f64> {
        self.row = 0;
        self.col = 0;
        self.episode.begin();
        self.encode()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        self.episode.guard(&self.spec, action)?;
        let last = self.size - 1;
        match action.as_discrete().expect("checked by guard") {
            Self::UP => self.row = self.row.saturating_sub(1),
            Self::RIGHT => self.col = (self.col + 1).min(last),
            Self::DOWN => self.row = (self.row + 1).min(last),
            _ => self.col = self.col.saturating_sub(1),
        }
        let terminal = self.row == last && self.col == last;
        let truncated = self.episode.tick(self.spec.max_episode_len, terminal);
        Ok(StepOutcome { next_state: self.encode(), reward: if terminal { 1.0 } else { 0.0 }, terminal, truncated })
    }

    fn episode_steps(&self) -> usize {
        self.episode.steps
    }
}

/// Chain of `n` states. "Right" moves towards the rewarding end; "left" moves
/// back, and taking it at the start pays a small distractor reward.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    spec: EnvironmentSpec,
    n: usize,
    pos: usize,
    episode: Episode,
}

impl ChainMdp {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;
    pub const DISTRACTOR_REWARD: f64 = 0.001;

    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "chain needs at least two states");
        Self {
            spec: EnvironmentSpec {
                id: format!("chain{n}"),
                state_dim: n,
                action_space: ActionSpace::Discrete(2),
                max_episode_len: 2 * n,
                reward_range: (0.0, 1.0),
            },
            n,
            pos: 0,
            episode: Episode::default(),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

impl Environment for ChainMdp {
    fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut Rng) -> Vec<f64> {
        self.pos = 0;
        self.episode.begin();
        one_hot(self.n, 0)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        self.episode.guard(&self.spec, action)?;
        let mut reward = 0.0;
        if action.as_discrete() == Some(Self::RIGHT) {
            self.pos += 1;
        } else if self.pos == 0 {
            reward = Self::DISTRACTOR_REWARD;
        } else {
            self.pos -= 1;
        }
        let terminal = self.pos == self.n - 1;
        if terminal {
            reward = 1.0;
        }
        let truncated = self.episode.tick(self.spec.max_episode_len, terminal);
        Ok(StepOutcome { next_state: one_hot(self.n, self.pos), reward, terminal, truncated })
    }

    fn episode_steps(&self) -> usize {
        self.episode.steps
    }
}

/// Cart-pole balancing with explicit Euler integration.
#[derive(Debug, Clone)]
pub struct CartPoleLite {
    spec: EnvironmentSpec,
    /// (x, ẋ, θ, θ̇)
    state: [f64; 4],
    episode: Episode,
}

impl CartPoleLite {
    pub const GRAVITY: f64 = 9.8;
    pub const MASS_CART: f64 = 1.0;
    pub const MASS_POLE: f64 = 0.1;
    /// Half the pole length.
    pub const HALF_LENGTH: f64 = 0.5;
    pub const FORCE: f64 = 10.0;
    pub const DT: f64 = 0.02;
    /// 12 degrees.
    pub const THETA_LIMIT: f64 = 12.0 * 2.0 * PI / 360.0;
    pub const X_LIMIT: f64 = 2.4;
    pub const INIT_SPREAD: f64 = 0.05;

    pub fn new() -> Self {
        Self {
            spec: EnvironmentSpec {
                id: "cartpole_lite".into(),
                state_dim: 4,
                action_space: ActionSpace::Discrete(2),
                max_episode_len: 200,
                reward_range: (0.0, 1.0),
            },
            state: [0.0; 4],
            episode: Episode::default(),
        }
    }

    /// Overwrite the physical state of the running episode.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }

    /// One Euler step of the cart-pole dynamics.
    pub fn dynamics(state: [f64; 4], push_right: bool) -> [f64; 4] {
        let [x, x_dot, theta, theta_dot] = state;
        let force = if push_right { Self::FORCE } else { -Self::FORCE };
        let total_mass = Self::MASS_CART + Self::MASS_POLE;
        let pole_mass_length = Self::MASS_POLE * Self::HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (Self::GRAVITY * sin - cos * temp)
            / (Self::HALF_LENGTH * (4.0 / 3.0 - Self::MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        [x + Self::DT * x_dot, x_dot + Self::DT * x_acc, theta + Self::DT * theta_dot, theta_dot + Self::DT * theta_acc]
    }
}

impl Default for CartPoleLite {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPoleLite {
    fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        for s in &mut self.state {
            *s = rng.random_range(-Self::INIT_SPREAD..Self::INIT_SPREAD);
        }
        self.episode.begin();
        self.state.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        self.episode.guard(&self.spec, action)?;
        self.state = Self::dynamics(self.state, action.as_discrete() == Some(1));
        let [x, _, theta, _] = self.state;
        let terminal = x.abs() > Self::X_LIMIT || theta.abs() > Self::THETA_LIMIT;
        let truncated = self.episode.tick(self.spec.max_episode_len, terminal);
        Ok(StepOutcome {
            next_state: self.state.to_vec(),
            reward: if terminal { 0.0 } else { 1.0 },
            terminal,
            truncated,
        })
    }

    fn episode_steps(&self) -> usize {
        self.episode.steps
    }
}

/// Torque-limited pendulum swing-up.
#[derive(Debug, Clone)]
pub struct PendulumLite {
    spec: EnvironmentSpec,
    theta: f64,
    theta_dot: f64,
    episode: Episode,
}

impl PendulumLite {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;

    pub fn new() -> Self {
        let worst = PI * PI + 0.1 * Self::MAX_SPEED * Self::MAX_SPEED + 0.001 * Self::MAX_TORQUE * Self::MAX_TORQUE;
        Self {
            spec: EnvironmentSpec {
                id: "pendulum_lite".into(),
                state_dim: 3,
                action_space: ActionSpace::Continuous { low: vec![-Self::MAX_TORQUE], high: vec![Self::MAX_TORQUE] },
                max_episode_len: 200,
                reward_range: (-worst, 0.0),
            },
            theta: 0.0,
            theta_dot: 0.0,
            episode: Episode::default(),
        }
    }

    pub fn angle(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Default for PendulumLite {
    fn default() -> Self {
        Self::new()
    }
}

/// Wrap an angle into [−π, π).
fn normalize_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Environment for PendulumLite {
    fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.episode.begin();
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        self.episode.guard(&self.spec, action)?;
        let u = action.as_continuous().expect("checked by guard")[0];
        let th = normalize_angle(self.theta);
        let cost = th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u;
        let (g, m, l, dt) = (Self::GRAVITY, Self::MASS, Self::LENGTH, Self::DT);
        let acc = 3.0 * g / (2.0 * l) * self.theta.sin() + 3.0 / (m * l * l) * u;
        self.theta_dot = (self.theta_dot + acc * dt).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += self.theta_dot * dt;
        let truncated = self.episode.tick(self.spec.max_episode_len, false);
        Ok(StepOutcome { next_state: self.observe(), reward: -cost, terminal: false, truncated })
    }

    fn episode_steps(&self) -> usize {
        self.episode.steps
    }
}
