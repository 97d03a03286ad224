//! Domain types shared by the environments, agents, criteria and the training loop.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An action, either an index into a discrete set or a real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(a) => Some(a),
        }
    }
}

/// Shape of an environment's action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Length of the action encoding: one-hot width for discrete spaces,
    /// dimension for continuous ones.
    pub fn encoding_len(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }

    /// One-hot for discrete actions, the raw vector for continuous actions.
    pub fn encode(&self, action: &Action) -> Result<Vec<f64>> {
        self.check(action)?;
        Ok(match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => {
                let mut v = vec![0.0; *n];
                v[*a] = 1.0;
                v
            }
            (_, Action::Continuous(a)) => a.clone(),
            _ => unreachable!("checked above"),
        })
    }

    /// Verify that `action` belongs to this space.
    pub fn check(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if a < n => Ok(()),
            (ActionSpace::Discrete(n), Action::Discrete(a)) => {
                Err(Error::Argument(format!("action {a} out of range for {n} actions")))
            }
            (ActionSpace::Continuous { low, high }, Action::Continuous(a)) => {
                if a.len() != low.len() {
                    return Err(Error::Argument(format!("action has dimension {}, expected {}", a.len(), low.len())));
                }
                for (i, v) in a.iter().enumerate() {
                    if !(low[i] <= *v && *v <= high[i]) {
                        return Err(Error::Argument(format!(
                            "action component {i} = {v} outside [{}, {}]",
                            low[i], high[i]
                        )));
                    }
                }
                Ok(())
            }
            _ => Err(Error::Argument("action kind does not match the action space".into())),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }
}

/// One environment interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// The next state is terminal; no bootstrapping past it.
    pub terminal: bool,
    pub step_index: usize,
}

/// Bounded FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<Transition>,
    insert_count: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, records: VecDeque::with_capacity(capacity.min(1 << 16)), insert_count: 0 })
    }

    pub fn push(&mut self, t: Transition) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(t);
        self.insert_count += 1;
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn insert_count(&self) -> u64 {
        self.insert_count
    }

    /// Records from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.records.iter()
    }

    /// Uniform sample with replacement from the `min(window, len)` newest records.
    pub fn sample_recent<'a>(
        &'a self,
        window: usize,
        count: usize,
        rng: &mut crate::seed::Rng,
    ) -> Result<Vec<&'a Transition>> {
        if count == 0 {
            return Err(Error::Argument("sample count must be positive".into()));
        }
        if window == 0 {
            return Err(Error::Argument("sample window must be positive".into()));
        }
        if self.records.is_empty() {
            return Err(Error::Protocol("cannot sample from an empty replay buffer".into()));
        }
        let w = window.min(self.records.len());
        let start = self.records.len() - w;
        Ok((0..count).map(|_| &self.records[start + rng.random_range(0..w)]).collect())
    }
}

/// Frozen parameters of the deployed policy.
///
/// The parameter vector is shared, never mutated: deploying copies the online
/// parameters into a fresh allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    params: Arc<[f64]>,
    pub version: u32,
    pub created_at_step: usize,
}

impl PolicySnapshot {
    pub fn new(params: &[f64], version: u32, created_at_step: usize) -> Self {
        Self { params: params.into(), version, created_at_step }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Snapshot of `params` with the next version number.
    pub fn successor(&self, params: &[f64], step: usize) -> Self {
        Self::new(params, self.version + 1, step)
    }
}

/// Completed episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    /// Step index of the episode's last transition.
    pub end_step: usize,
    pub length: usize,
    /// Undiscounted sum of environment rewards (no exploration bonus).
    pub episode_return: f64,
}

/// Everything a training run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub total_steps: usize,
    pub step_rewards: Vec<f64>,
    pub episodes: Vec<EpisodeSummary>,
    /// Step index after which each deployment happened, increasing.
    pub switch_steps: Vec<usize>,
    /// Deployed version that chose the action at each step.
    pub deployed_versions: Vec<u32>,
    pub switching_cost: usize,
    pub final_version: u32,
}

/// Fraction of the run, counted from the end, whose episodes define the final return.
pub const FINAL_WINDOW_FRACTION: f64 = 0.1;

impl RunRecord {
    /// Mean return of the episodes that ended in the last 10% of training steps.
    ///
    /// Falls back to the last completed episode if none ended in that window,
    /// and to 0 for a run without completed episodes.
    pub fn final_return(&self) -> f64 {
        final_return(&self.episodes, self.total_steps)
    }
}

/// See [`RunRecord::final_return`].
pub fn final_return(episodes: &[EpisodeSummary], total_steps: usize) -> f64 {
    let cutoff = total_steps as f64 * (1.0 - FINAL_WINDOW_FRACTION);
    let tail: Vec<f64> = episodes.iter().filter(|e| e.end_step as f64 >= cutoff).map(|e| e.episode_return).collect();
    if !tail.is_empty() {
        tail.iter().sum::<f64>() / tail.len() as f64
    } else {
        episodes.last().map_or(0.0, |e| e.episode_return)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn transition(i: usize) -> Transition {
        Transition {
            state: vec![i as f64],
            action: Action::Discrete(0),
            reward: 0.0,
            next_state: vec![i as f64 + 1.0],
            terminal: false,
            step_index: i,
        }
    }

    fn filled(n: usize, capacity: usize) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(capacity).unwrap();
        for i in 0..n {
            b.push(transition(i));
        }
        b
    }

    #[test]
    fn window_larger_than_buffer_uses_everything() {
        let b = filled(5, 100);
        let mut rng = seed::rng(0, 0);
        let batch = b.sample_recent(10, 5000, &mut rng).unwrap();
        let mut seen = [false; 5];
        for t in batch {
            seen[t.step_index] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn window_bounds_age() {
        let b = filled(20000, 50000);
        let mut rng = seed::rng(1, 0);
        let batch = b.sample_recent(10000, 4096, &mut rng).unwrap();
        assert!(batch.iter().all(|t| t.step_index >= 10000));
    }

    #[test]
    fn sampling_is_deterministic() {
        let b = filled(300, 1000);
        let x: Vec<usize> =
            b.sample_recent(100, 32, &mut seed::rng(9, 3)).unwrap().iter().map(|t| t.step_index).collect();
        let y: Vec<usize> =
            b.sample_recent(100, 32, &mut seed::rng(9, 3)).unwrap().iter().map(|t| t.step_index).collect();
        assert_eq!(x, y);
    }

    #[test]
    fn sampling_errors() {
        let mut rng = seed::rng(0, 0);
        assert!(matches!(filled(3, 10).sample_recent(4, 0, &mut rng), Err(Error::Argument(_))));
        assert!(matches!(filled(0, 10).sample_recent(4, 1, &mut rng), Err(Error::Protocol(_))));
    }

    #[test]
    fn action_checks() {
        let d = ActionSpace::Discrete(4);
        assert!(d.check(&Action::Discrete(3)).is_ok());
        assert!(d.check(&Action::Discrete(4)).is_err());
        assert_eq!(d.encode(&Action::Discrete(1)).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        let c = ActionSpace::Continuous { low: vec![-2.0], high: vec![2.0] };
        assert!(c.check(&Action::Continuous(vec![2.0])).is_ok());
        assert!(c.check(&Action::Continuous(vec![2.5])).is_err());
        assert!(c.check(&Action::Discrete(0)).is_err());
    }

    #[test]
    fn final_return_uses_last_tenth() {
        let eps = vec![
            EpisodeSummary { end_step: 10, length: 10, episode_return: 0.0 },
            EpisodeSummary { end_step: 95, length: 85, episode_return: 1.0 },
            EpisodeSummary { end_step: 99, length: 4, episode_return: 0.5 },
        ];
        assert_eq!(final_return(&eps, 100), 0.75);
        assert_eq!(final_return(&eps[..1], 100), 0.0);
        assert_eq!(final_return(&[], 100), 0.0);
    }

    proptest! {
        #[test]
        fn fifo_eviction(capacity in 1usize..50, extra in 0usize..50) {
            let b = filled(capacity + extra, capacity);
            prop_assert_eq!(b.len(), capacity);
            // after capacity+m inserts the oldest survivor is insert m+1 (index m)
            prop_assert_eq!(b.iter().next().unwrap().step_index, extra);
            prop_assert_eq!(b.insert_count(), (capacity + extra) as u64);
        }
    }
}
