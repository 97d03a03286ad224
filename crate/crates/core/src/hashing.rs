//! Random-projection sign hashing of states.
//!
//! A fixed Gaussian matrix `A` maps a state `x` to the sign pattern
//! `φ(x) = sign(A·x)`, with `sign(0) = +1`. Patterns of up to 63 signs are
//! packed into an integer key, bit `i` set when component `i` is `+1`.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::types::{Action, ActionSpace};

/// Widest pattern that packs injectively into a key.
pub const MAX_PROJECTION_DIM: usize = 63;
/// Default width for visitation counting and the exploration bonus.
pub const DEFAULT_COUNT_DIM: usize = 16;
/// Default width of the `φ` part of `ψ(x, a)`.
pub const DEFAULT_PSI_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjection {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols`.
    matrix: Vec<f64>,
}

impl RandomProjection {
    /// Draw `A` with i.i.d. standard normal entries from `rng`.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Result<Self> {
        let matrix = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
        Self::from_matrix(rows, cols, matrix)
    }

    /// Projection for the run seeded with `run_seed`, drawn from `stream`.
    pub fn seeded(rows: usize, cols: usize, run_seed: u64, stream: u64) -> Result<Self> {
        Self::gaussian(rows, cols, &mut seed::rng(run_seed, stream))
    }

    pub fn from_matrix(rows: usize, cols: usize, matrix: Vec<f64>) -> Result<Self> {
        if rows == 0 || rows > MAX_PROJECTION_DIM {
            return Err(Error::Argument(format!("projection width must be in 1..={MAX_PROJECTION_DIM}, got {rows}")));
        }
        if cols == 0 || matrix.len() != rows * cols {
            return Err(Error::Argument("projection matrix shape mismatch".into()));
        }
        Ok(Self { rows, cols, matrix })
    }

    pub fn output_dim(&self) -> usize {
        self.rows
    }

    pub fn input_dim(&self) -> usize {
        self.cols
    }

    /// `sign(A·x)` as ±1 values.
    pub fn signs(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.cols {
            return Err(Error::Argument(format!(
                "state has dimension {}, projection expects {}",
                state.len(),
                self.cols
            )));
        }
        Ok(self
            .matrix
            .chunks_exact(self.cols)
            .map(|row| {
                let s: f64 = row.iter().zip(state).map(|(a, x)| a * x).sum();
                if s >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect())
    }

    /// Packed sign pattern of `state`.
    pub fn project(&self, state: &[f64]) -> Result<u64> {
        Ok(pack(&self.signs(state)?))
    }

    /// `ψ(x, a) = [φ(x), a]`: the sign pattern followed by the action
    /// encoding (one-hot for discrete actions, raw for continuous ones).
    pub fn psi(&self, state: &[f64], action: &Action, space: &ActionSpace) -> Result<Vec<f64>> {
        let mut v = self.signs(state)?;
        v.extend(space.encode(action)?);
        Ok(v)
    }
}

fn pack(signs: &[f64]) -> u64 {
    signs.iter().enumerate().fold(0u64, |k, (i, s)| if *s > 0.0 { k | (1 << i) } else { k })
}

/// Counting key: packed state pattern plus an optional action key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashKey {
    pub state: u64,
    pub action: Option<u64>,
}

/// Bins per dimension used to key continuous actions.
pub const CONTINUOUS_ACTION_BINS: u64 = 8;

/// Integer key for an action: the index for discrete actions; for continuous
/// actions each component is quantized into [`CONTINUOUS_ACTION_BINS`] equal
/// bins over its bounds and the bin indices are packed base-`BINS`.
pub fn action_key(action: &Action, space: &ActionSpace) -> Result<u64> {
    space.check(action)?;
    Ok(match (action, space) {
        (Action::Discrete(a), _) => *a as u64,
        (Action::Continuous(a), ActionSpace::Continuous { low, high }) => {
            a.iter().zip(low.iter().zip(high)).fold(0u64, |k, (v, (l, h))| {
                let bin = (((v - l) / (h - l)) * CONTINUOUS_ACTION_BINS as f64) as u64;
                k * CONTINUOUS_ACTION_BINS + bin.min(CONTINUOUS_ACTION_BINS - 1)
            })
        }
        _ => unreachable!("checked above"),
    })
}

/// Visitation counts `n(φ(x))` or `n(φ(x), a)` over hashed states.
#[derive(Debug, Clone)]
pub struct HashedCounter {
    projection: RandomProjection,
    table: HashMap<HashKey, u64>,
    total: u64,
}

impl HashedCounter {
    pub fn new(projection: RandomProjection) -> Self {
        Self { projection, table: HashMap::new(), total: 0 }
    }

    pub fn projection(&self) -> &RandomProjection {
        &self.projection
    }

    pub fn key(&self, state: &[f64], action: Option<u64>) -> Result<HashKey> {
        Ok(HashKey { state: self.projection.project(state)?, action })
    }

    /// Increment and return the count for `φ(state)` (joined with `action` if given).
    pub fn observe(&mut self, state: &[f64], action: Option<u64>) -> Result<u64> {
        let key = self.key(state, action)?;
        let n = self.table.entry(key).or_insert(0);
        *n += 1;
        self.total += 1;
        Ok(*n)
    }

    pub fn count(&self, state: &[f64], action: Option<u64>) -> Result<u64> {
        Ok(self.table.get(&self.key(state, action)?).copied().unwrap_or(0))
    }

    /// Number of `observe` calls so far.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct_keys(&self) -> usize {
        self.table.len()
    }

    pub fn counts(&self) -> impl Iterator<Item = (&HashKey, &u64)> {
        self.table.iter()
    }
}
