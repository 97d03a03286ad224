//! Deployment criteria.
//!
//! A [`Criterion`] sees every environment step through [`Criterion::observe`]
//! and is asked whether to deploy after every online update through
//! [`Criterion::decide`]. Criteria that react to single steps (visitation and
//! information-matrix) latch a pending deployment when a step triggers and
//! report it at the next decision.
//!
//! The pure decision rules are exposed as free functions so they can be used
//! and tested without a training loop.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

/// Dense matrix type of the information-matrix criterion.
pub type Matrix = DMatrix<f64>;

/// Labelled inputs.
pub type Dataset = Vec<(Vec<f64>, f64)>;

use crate::agents::{Agent, Decision, PolicyView};
use crate::error::{Error, Result};
use crate::hashing::{self, HashedCounter, RandomProjection};
use crate::seed::{self, Rng};
use crate::types::{Action, ActionSpace, PolicySnapshot, ReplayBuffer};

/// Criterion ids understood by [`CriterionSpec::from_str`].
pub const CRITERION_IDS: [&str; 7] = ["none", "never", "fix", "policy", "feature", "visitation", "info"];

/// Transitions considered when sampling a comparison batch.
pub const DEFAULT_CHECK_WINDOW: usize = 10_000;
/// States per comparison batch.
pub const DEFAULT_CHECK_BATCH: usize = 512;
/// Steps without a deployment after which the reset-checking wrapper forces one.
pub const DEFAULT_FORCE_AFTER: usize = 10_000;

// ---------------------------------------------------------------------------
// Pure decision rules

/// `k mod n == 0`.
pub fn fix_decide(step: usize, n: usize) -> Result<bool> {
    if n == 0 {
        return Err(Error::Argument("fixed switching interval must be at least 1".into()));
    }
    Ok(step.is_multiple_of(n))
}

/// Fraction of states where the two greedy actions differ.
pub fn mismatch_ratio(deployed: &[usize], online: &[usize]) -> Result<f64> {
    if deployed.is_empty() || deployed.len() != online.len() {
        return Err(Error::Argument("mismatch ratio needs two equally long, nonempty action lists".into()));
    }
    let differ = deployed.iter().zip(online).filter(|(a, b)| a != b).count();
    Ok(differ as f64 / deployed.len() as f64)
}

/// `KL(p ‖ q)` between diagonal Gaussians given by means and log standard deviations.
pub fn gaussian_kl(mean_p: &[f64], log_std_p: &[f64], mean_q: &[f64], log_std_q: &[f64]) -> f64 {
    (0..mean_p.len())
        .map(|i| {
            let var_p = (2.0 * log_std_p[i]).exp();
            let var_q = (2.0 * log_std_q[i]).exp();
            let d = mean_p[i] - mean_q[i];
            log_std_q[i] - log_std_p[i] + (var_p + d * d) / (2.0 * var_q) - 0.5
        })
        .sum()
}

/// Policy divergence on a batch: the greedy-action mismatch ratio for
/// discrete policies, the mean `KL(deployed ‖ online)` for Gaussian ones.
pub fn policy_divergence(deployed: &[PolicyView], online: &[PolicyView]) -> Result<f64> {
    policy_divergence_with(deployed, online, KlDirection::DeployedOnline)
}

/// Argument order of the Gaussian KL used by the policy criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `KL(deployed ‖ online)`
    #[default]
    DeployedOnline,
    /// `KL(online ‖ deployed)`
    OnlineDeployed,
}

pub fn policy_divergence_with(deployed: &[PolicyView], online: &[PolicyView], kl: KlDirection) -> Result<f64> {
    if deployed.is_empty() || deployed.len() != online.len() {
        return Err(Error::Argument("policy comparison needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for (d, o) in deployed.iter().zip(online) {
        total += match (&d.decision, &o.decision) {
            (Decision::Greedy(a), Decision::Greedy(b)) => f64::from(u8::from(a != b)),
            (Decision::Gaussian { mean: m1, log_std: s1 }, Decision::Gaussian { mean: m2, log_std: s2 }) => match kl {
                KlDirection::DeployedOnline => gaussian_kl(m1, s1, m2, s2),
                KlDirection::OnlineDeployed => gaussian_kl(m2, s2, m1, s1),
            },
            _ => return Err(Error::Argument("cannot compare discrete and continuous policies".into())),
        };
    }
    Ok(total / deployed.len() as f64)
}

/// `divergence ≥ σ_p`.
pub fn policy_decide(divergence: f64, sigma: f64) -> bool {
    divergence >= sigma
}

/// Average cosine similarity over a batch of feature pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub value: f64,
    /// Pairs left out because one of the vectors had zero norm.
    pub excluded: usize,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity between paired feature vectors. Pairs with a
/// zero-norm vector are skipped and counted; if every pair is skipped the
/// similarity is 1.
pub fn feature_similarity<A: AsRef<[f64]>, B: AsRef<[f64]>>(deployed: &[A], online: &[B]) -> Result<Similarity> {
    if deployed.len() != online.len() {
        return Err(Error::Argument("feature batches differ in length".into()));
    }
    let (mut sum, mut used) = (0.0, 0usize);
    for (d, o) in deployed.iter().zip(online) {
        if let Some(c) = cosine(d.as_ref(), o.as_ref()) {
            sum += c;
            used += 1;
        }
    }
    let excluded = deployed.len() - used;
    Ok(Similarity { value: if used == 0 { 1.0 } else { sum / used as f64 }, excluded })
}

/// `sim ≤ σ_f`.
pub fn feature_decide(similarity: f64, sigma: f64) -> bool {
    similarity <= sigma
}

/// Restrict a criterion to episode boundaries and force a deployment after
/// `force_after` steps without one. `inner` is only evaluated when needed.
pub fn reset_check_wrapper(
    inner: impl FnOnce() -> Result<bool>,
    episode_reset: bool,
    steps_since_switch: usize,
    force_after: usize,
) -> Result<bool> {
    if force_after == 0 {
        return Err(Error::Argument("force_after must be at least 1".into()));
    }
    if steps_since_switch >= force_after {
        Ok(true)
    } else if !episode_reset {
        Ok(false)
    } else {
        inner()
    }
}

/// The visitation count just reached a power of two (1, 2, 4, 8, ...).
pub fn visitation_decide(count: u64) -> bool {
    count.is_power_of_two()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Per-timestep regularized feature covariances `Λ_h = λI + Σ ψψᵀ` and the
/// smallest eigenvalue each had when it last triggered.
#[derive(Debug, Clone)]
pub struct InfoMatrixState {
    lambda: f64,
    dim: usize,
    horizon: usize,
    matrices: Vec<Option<DMatrix<f64>>>,
    reference: Vec<f64>,
}

impl InfoMatrixState {
    pub fn new(dim: usize, horizon: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Argument(format!("λ must be positive, got {lambda}")));
        }
        if dim == 0 || horizon == 0 {
            return Err(Error::Argument("information matrix needs positive dimension and horizon".into()));
        }
        Ok(Self { lambda, dim, horizon, matrices: vec![None; horizon], reference: vec![lambda; horizon] })
    }

    /// `Λ_h`, materialized on first use.
    pub fn matrix(&self, h: usize) -> DMatrix<f64> {
        self.matrices
            .get(h)
            .and_then(Clone::clone)
            .unwrap_or_else(|| DMatrix::identity(self.dim, self.dim) * self.lambda)
    }

    pub fn reference(&self, h: usize) -> f64 {
        self.reference[h]
    }

    /// Add `ψψᵀ` to `Λ_h`; trigger (and move the reference) when the smallest
    /// eigenvalue has at least doubled since the last trigger at `h`.
    pub fn update_and_decide(&mut self, h: usize, psi: &[f64]) -> Result<bool> {
        if h >= self.horizon {
            return Err(Error::Argument(format!("episode timestep {h} beyond horizon {}", self.horizon)));
        }
        if psi.len() != self.dim {
            return Err(Error::Argument(format!("ψ has length {}, expected {}", psi.len(), self.dim)));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite ψ"));
        }
        let (lambda, dim) = (self.lambda, self.dim);
        let m = self.matrices[h].get_or_insert_with(|| DMatrix::identity(dim, dim) * lambda);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] += psi[i] * psi[j];
            }
        }
        let v = smallest_eigenvalue(m);
        if v >= 2.0 * self.reference[h] {
            self.reference[h] = v;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

// ---------------------------------------------------------------------------
// Representation-similarity construction

/// ERM over the feature class `f(x)_i = 2σ(⟨v_i, x⟩) − 1`, `v_i ∈ {e_i, −e_i}`,
/// readout `w = (1, …, 1)`, with the rectifier convention `σ(0) = 0.5`.
///
/// `D₁` holds `(e_i, 1)` for the first `(1 − α)k` coordinates, `D₂` the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremConstruction {
    pub k: usize,
    /// `|D₂| = αk`.
    pub held_out: usize,
}

/// Result of [`theorem1_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremOutcome {
    /// Fraction of coordinates where `f¹` and `f¹⁺²` pick the same direction.
    pub similarity: f64,
    /// Mean squared error of `f¹` on `D₁ ∪ D₂`, normalized by the largest
    /// possible per-example error (4).
    pub prediction_error: f64,
}

impl TheoremConstruction {
    pub fn new(k: usize, alpha: f64) -> Result<Self> {
        if k == 0 || !k.is_multiple_of(2) {
            return Err(Error::Argument(format!("k must be a positive even number, got {k}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Argument(format!("α must lie in (0, 1), got {alpha}")));
        }
        let held = alpha * k as f64;
        if (held - held.round()).abs() > 1e-9 {
            return Err(Error::Argument(format!("αk must be an integer, got {held}")));
        }
        Ok(Self { k, held_out: held.round() as usize })
    }

    fn rectifier(z: f64) -> f64 {
        if z == 0.0 {
            0.5
        } else {
            z.max(0.0)
        }
    }

    /// `f(x)` for directions `signs` (`+1` for `e_i`, `−1` for `−e_i`).
    pub fn features(&self, signs: &[i8], x: &[f64]) -> Vec<f64> {
        signs.iter().enumerate().map(|(i, s)| 2.0 * Self::rectifier(f64::from(*s) * x[i]) - 1.0).collect()
    }

    pub fn predict(&self, signs: &[i8], x: &[f64]) -> f64 {
        self.features(signs, x).iter().sum()
    }

    fn basis(&self, i: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.k];
        e[i] = 1.0;
        e
    }

    /// `(input, label)` pairs of `D₁` and `D₂`.
    pub fn datasets(&self) -> (Dataset, Dataset) {
        let split = self.k - self.held_out;
        ((0..split).map(|i| (self.basis(i), 1.0)).collect(), (split..self.k).map(|i| (self.basis(i), 1.0)).collect())
    }

    pub fn empirical_risk(&self, signs: &[i8], data: &[(Vec<f64>, f64)]) -> f64 {
        data.iter().map(|(x, y)| (y - self.predict(signs, x)).powi(2)).sum::<f64>() / data.len() as f64
    }

    /// An empirical risk minimizer on `data`. The risk separates over
    /// coordinates (example `e_j` only reads `v_j`), so each direction is
    /// chosen independently; a coordinate no example constrains takes
    /// `unconstrained`.
    pub fn erm(&self, data: &[(Vec<f64>, f64)], unconstrained: i8) -> Vec<i8> {
        (0..self.k)
            .map(|j| {
                let relevant: Vec<&(Vec<f64>, f64)> = data.iter().filter(|(x, _)| x[j] != 0.0).collect();
                if relevant.is_empty() {
                    return unconstrained;
                }
                let risk = |s: i8| -> f64 {
                    let mut signs = vec![1i8; self.k];
                    signs[j] = s;
                    relevant.iter().map(|(x, y)| (y - self.predict(&signs, x)).powi(2)).sum()
                };
                if risk(1) <= risk(-1) {
                    1
                } else {
                    -1
                }
            })
            .collect()
    }
}

/// Build the construction, train `f¹` adversarially on `D₁` (every direction
/// `D₁` leaves free is flipped) and `f¹⁺²` on `D₁ ∪ D₂`, and report their
/// agreement and the error of `f¹` on `D₁ ∪ D₂`.
pub fn theorem1_check(k: usize, alpha: f64) -> Result<TheoremOutcome> {
    let c = TheoremConstruction::new(k, alpha)?;
    let (d1, d2) = c.datasets();
    let all: Vec<(Vec<f64>, f64)> = d1.iter().chain(&d2).cloned().collect();
    let f1 = c.erm(&d1, -1);
    let f12 = c.erm(&all, -1);
    Ok(outcome(&c, &f1, &f12, &all))
}

/// Same comparison when `f¹` happens to equal `f¹⁺²`.
pub fn theorem1_exact_recovery(k: usize, alpha: f64) -> Result<TheoremOutcome> {
    let c = TheoremConstruction::new(k, alpha)?;
    let (d1, d2) = c.datasets();
    let all: Vec<(Vec<f64>, f64)> = d1.iter().chain(&d2).cloned().collect();
    let f12 = c.erm(&all, -1);
    Ok(outcome(&c, &f12, &f12, &all))
}

fn outcome(c: &TheoremConstruction, f1: &[i8], f12: &[i8], all: &[(Vec<f64>, f64)]) -> TheoremOutcome {
    let agree = f1.iter().zip(f12).filter(|(a, b)| a == b).count();
    TheoremOutcome { similarity: agree as f64 / c.k as f64, prediction_error: c.empirical_risk(f1, all) / 4.0 }
}

// ---------------------------------------------------------------------------
// Criterion specs and stateful criteria

/// A parsed criterion id with parameters, e.g. `fix:n=1000` or
/// `feature:sigma=0.97,force=10000`.
#[derive(Debug, Clone, PartialEq)]
pub enum CriterionSpec {
    /// Deploy at every online update.
    None,
    /// Never deploy.
    Never,
    Fix {
        n: usize,
    },
    Policy {
        sigma: Option<f64>,
        force: usize,
        reset_check: bool,
        kl: KlDirection,
    },
    Feature {
        sigma: Option<f64>,
        force: usize,
        reset_check: bool,
    },
    Visitation,
    Info {
        lambda: f64,
    },
}

impl CriterionSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            CriterionSpec::None => "none",
            CriterionSpec::Never => "never",
            CriterionSpec::Fix { .. } => "fix",
            CriterionSpec::Policy { .. } => "policy",
            CriterionSpec::Feature { .. } => "feature",
            CriterionSpec::Visitation => "visitation",
            CriterionSpec::Info { .. } => "info",
        }
    }

    /// Default policy threshold: mismatch ratio for discrete actions, KL for continuous.
    pub fn default_policy_sigma(space: &ActionSpace) -> f64 {
        if space.is_discrete() {
            0.5
        } else {
            1.0
        }
    }

    pub fn default_feature_sigma(space: &ActionSpace) -> f64 {
        if space.is_discrete() {
            0.97
        } else {
            0.8
        }
    }
}

impl fmt::Display for CriterionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrapped = |f: &mut fmt::Formatter<'_>, kind: &str, sigma: &Option<f64>, force: usize, reset: bool| {
            let mut parts = Vec::new();
            if let Some(s) = sigma {
                parts.push(format!("sigma={s}"));
            }
            if force != DEFAULT_FORCE_AFTER {
                parts.push(format!("force={force}"));
            }
            if !reset {
                parts.push("reset=false".to_string());
            }
            if parts.is_empty() {
                write!(f, "{kind}")
            } else {
                write!(f, "{kind}:{}", parts.join(","))
            }
        };
        match self {
            CriterionSpec::Fix { n } => write!(f, "fix:n={n}"),
            CriterionSpec::Policy { sigma, force, reset_check, kl } => {
                wrapped(f, "policy", sigma, *force, *reset_check)?;
                match kl {
                    KlDirection::DeployedOnline => Ok(()),
                    KlDirection::OnlineDeployed if sigma.is_none() && *force == DEFAULT_FORCE_AFTER && *reset_check => {
                        write!(f, ":kl=reverse")
                    }
                    KlDirection::OnlineDeployed => write!(f, ",kl=reverse"),
                }
            }
            CriterionSpec::Feature { sigma, force, reset_check } => wrapped(f, "feature", sigma, *force, *reset_check),
            CriterionSpec::Info { lambda } if *lambda == 1.0 => write!(f, "info"),
            CriterionSpec::Info { lambda } => write!(f, "info:lambda={lambda}"),
            other => write!(f, "{}", other.kind()),
        }
    }
}

impl FromStr for CriterionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params: Vec<(String, String)> = Vec::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some((k, v)) => params.push((k.trim().to_string(), v.trim().to_string())),
                // `fix:1000` shorthand
                None if kind == "fix" => params.push(("n".into(), part.to_string())),
                None => return Err(Error::Config(format!("criterion '{s}': parameter '{part}' is not key=value"))),
            }
        }
        let allowed: &[&str] = match kind {
            "none" | "never" | "visitation" => &[],
            "fix" => &["n"],
            "policy" => &["sigma", "force", "reset", "kl"],
            "feature" => &["sigma", "force", "reset"],
            "info" => &["lambda"],
            other => {
                return Err(Error::Config(format!("unknown criterion '{other}' (valid: {})", CRITERION_IDS.join(", "))))
            }
        };
        if let Some((k, _)) = params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("criterion '{kind}' has no parameter '{k}'")));
        }
        let get = |key: &str| params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let num = |key: &str| -> Result<Option<f64>> {
            get(key)
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Config(format!("criterion '{kind}': {key}='{v}' is not a number")))
                })
                .transpose()
        };
        let count = |key: &str| -> Result<Option<usize>> {
            get(key)
                .map(|v| {
                    v.parse::<usize>().ok().filter(|n| *n > 0).ok_or_else(|| {
                        Error::Config(format!("criterion '{kind}': {key}='{v}' is not a positive integer"))
                    })
                })
                .transpose()
        };
        let reset = match get("reset") {
            None | Some("true") => true,
            Some("false") => false,
            Some(v) => return Err(Error::Config(format!("criterion '{kind}': reset='{v}' is not true/false"))),
        };
        Ok(match kind {
            "none" => CriterionSpec::None,
            "never" => CriterionSpec::Never,
            "visitation" => CriterionSpec::Visitation,
            "fix" => CriterionSpec::Fix {
                n: count("n")?.ok_or_else(|| Error::Config("criterion 'fix' needs n=<interval>".into()))?,
            },
            "policy" | "feature" => {
                let sigma = num("sigma")?;
                if kind == "feature" && sigma.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::Config("feature sigma must lie in [0, 1]".into()));
                }
                if kind == "policy" && sigma.is_some_and(|v| v < 0.0) {
                    return Err(Error::Config("policy sigma must be nonnegative".into()));
                }
                let force = count("force")?.unwrap_or(DEFAULT_FORCE_AFTER);
                if kind == "policy" {
                    let kl = match get("kl") {
                        None | Some("forward") => KlDirection::DeployedOnline,
                        Some("reverse") => KlDirection::OnlineDeployed,
                        Some(v) => {
                            return Err(Error::Config(format!("criterion 'policy': kl='{v}' is not forward/reverse")))
                        }
                    };
                    CriterionSpec::Policy { sigma, force, reset_check: reset, kl }
                } else {
                    CriterionSpec::Feature { sigma, force, reset_check: reset }
                }
            }
            "info" => {
                let lambda = num("lambda")?.unwrap_or(1.0);
                if lambda <= 0.0 {
                    return Err(Error::Config("info lambda must be positive".into()));
                }
                CriterionSpec::Info { lambda }
            }
            _ => unreachable!("kind validated above"),
        })
    }
}

impl serde::Serialize for CriterionSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for CriterionSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One environment step, as seen by [`Criterion::observe`].
#[derive(Debug, Clone, Copy)]
pub struct StepInfo<'a> {
    pub state: &'a [f64],
    pub action: &'a Action,
    /// Zero-based timestep of this transition within its episode.
    pub episode_step: usize,
    pub action_space: &'a ActionSpace,
}

/// Everything a criterion may consult at an update event.
pub struct DecisionContext<'a> {
    /// Environment steps completed so far.
    pub step: usize,
    /// An episode ended since the previous decision.
    pub episode_reset: bool,
    /// Environment steps since the last deployment (or since training started).
    pub steps_since_switch: usize,
    pub agent: &'a dyn Agent,
    pub deployed: &'a PolicySnapshot,
    pub buffer: &'a ReplayBuffer,
    pub rng: &'a mut Rng,
    pub check_window: usize,
    pub check_batch: usize,
}

impl DecisionContext<'_> {
    /// Views of the deployed and online policies on a batch of recent states.
    pub fn comparison(&mut self) -> Result<(Vec<PolicyView>, Vec<PolicyView>)> {
        let online = self.agent.online_params();
        let batch = self.buffer.sample_recent(self.check_window, self.check_batch, self.rng)?;
        let mut dep = Vec::with_capacity(batch.len());
        let mut onl = Vec::with_capacity(batch.len());
        for t in batch {
            dep.push(self.agent.view(self.deployed.params(), &t.state)?);
            onl.push(self.agent.view(&online, &t.state)?);
        }
        Ok((dep, onl))
    }
}

pub trait Criterion: Send {
    /// Called after every environment step.
    fn observe(&mut self, _step: &StepInfo<'_>) -> Result<()> {
        Ok(())
    }

    /// Called after every online update; `true` deploys the online parameters.
    fn decide(&mut self, ctx: &mut DecisionContext<'_>) -> Result<bool>;

    /// Feature pairs skipped so far because of zero-norm features.
    fn zero_norm_warnings(&self) -> u64 {
        0
    }
}

struct Always(bool);

impl Criterion for Always {
    fn decide(&mut self, _ctx: &mut DecisionContext<'_>) -> Result<bool> {
        Ok(self.0)
    }
}

/// `FIX_n`: deploys when a multiple of `n` environment steps has been passed
/// since the previous decision, which reduces to `k mod n == 0` whenever the
/// update period divides `n`.
pub struct FixCriterion {
    n: usize,
    last_checked: Option<usize>,
}

impl FixCriterion {
    pub fn new(n: usize) -> Result<Self> {
        fix_decide(0, n)?;
        Ok(Self { n, last_checked: None })
    }
}

impl Criterion for FixCriterion {
    fn decide(&mut self, ctx: &mut DecisionContext<'_>) -> Result<bool> {
        let fire = match self.last_checked {
            Some(last) => ctx.step / self.n > last / self.n,
            None => fix_decide(ctx.step, self.n)?,
        };
        self.last_checked = Some(ctx.step);
        Ok(fire)
    }
}

pub struct PolicyCriterion {
    sigma: f64,
    kl: KlDirection,
}

impl Criterion for PolicyCriterion {
    fn decide(&mut self, ctx: &mut DecisionContext<'_>) -> Result<bool> {
        let (dep, onl) = ctx.comparison()?;
        Ok(policy_decide(policy_divergence_with(&dep, &onl, self.kl)?, self.sigma))
    }
}

pub struct FeatureCriterion {
    sigma: f64,
    warnings: u64,
}

impl Criterion for FeatureCriterion {
    fn decide(&mut self, ctx: &mut DecisionContext<'_>) -> Result<bool> {
        let (dep, onl) = ctx.comparison()?;
        let d: Vec<&[f64]> = dep.iter().map(|v| v.feature.as_slice()).collect();
        let o: Vec<&[f64]> = onl.iter().map(|v| v.feature.as_slice()).collect();
        let sim = feature_similarity(&d, &o)?;
        self.warnings += sim.excluded as u64;
        Ok(feature_decide(sim.value, self.sigma))
    }

    fn zero_norm_warnings(&self) -> u64 {
        self.warnings
    }
}

/// Wraps a criterion with [`reset_check_wrapper`].
pub struct ResetChecked {
    inner: Box<dyn Criterion>,
    force_after: usize,
}

impl ResetChecked {
    pub fn new(inner: Box<dyn Criterion>, force_after: usize) -> Result<Self> {
        if force_after == 0 {
            return Err(Error::Argument("force_after must be at least 1".into()));
        }
        Ok(Self { inner, force_after })
    }
}

impl Criterion for ResetChecked {
    fn observe(&mut self, step: &StepInfo<'_>) -> Result<()> {
        self.inner.observe(step)
    }

    fn decide(&mut self, ctx: &mut DecisionContext<'_>) -> Result<bool> {
        let (reset, since, force) = (ctx.episode_reset, ctx.steps_since_switch, self.force_after);
        let inner = &mut self.inner;
        reset_check_wrapper(|| inner.decide(ctx), reset, since, force)
    }

    fn zero_norm_warnings(&self) -> u64 {
        self.inner.zero_norm_warnings()
    }
}

/// Deploys after a step whose hashed state-action count hit a power of two.
pub struct VisitationCriterion {
    counter: HashedCounter,
    pending: bool,
    triggers: u64,
}

impl VisitationCriterion {
    pub fn new(projection: RandomProjection) -> Self {
        Self { counter: HashedCounter::new(projection), pending: false, triggers: 0 }
    }

    /// Steps whose count hit a power of two.
    pub fn triggers(&self) -> u64 {
        self.triggers
    }
}

impl Criterion for VisitationCriterion {
    fn observe(&mut self, step: &StepInfo<'_>) -> Result<()> {
        let key = hashing::action_key(step.action, step.action_space)?;
        let n = self.counter.observe(step.state, Some(key))?;
        if visitation_decide(n) {
            self.pending = true;
            self.triggers += 1;
        }
        Ok(())
    }

    fn decide(&mut self, _ctx: &mut DecisionContext<'_>) -> Result<bool> {
        Ok(std::mem::take(&mut self.pending))
    }
}

/// Deploys after a step at which some `Λ_h`'s smallest eigenvalue doubled.
pub struct InfoMatrixCriterion {
    projection: RandomProjection,
    state: InfoMatrixState,
    pending: bool,
}

impl InfoMatrixCriterion {
    pub fn new(projection: RandomProjection, action_space: &ActionSpace, horizon: usize, lambda: f64) -> Result<Self> {
        let dim = projection.output_dim() + action_space.encoding_len();
        Ok(Self { projection, state: InfoMatrixState::new(dim, horizon, lambda)?, pending: false })
    }
}

impl Criterion for InfoMatrixCriterion {
    fn observe(&mut self, step: &StepInfo<'_>) -> Result<()> {
        let psi = self.projection.psi(step.state, step.action, step.action_space)?;
        if self.state.update_and_decide(step.episode_step, &psi)? {
            self.pending = true;
        }
        Ok(())
    }

    fn decide(&mut self, _ctx: &mut DecisionContext<'_>) -> Result<bool> {
        Ok(std::mem::take(&mut self.pending))
    }
}

/// Instantiate `spec` for an environment with the given shape.
pub fn build_criterion(
    spec: &CriterionSpec,
    state_dim: usize,
    action_space: &ActionSpace,
    horizon: usize,
    run_seed: u64,
) -> Result<Box<dyn Criterion>> {
    let wrap = |inner: Box<dyn Criterion>, force: usize, reset: bool| -> Result<Box<dyn Criterion>> {
        if reset {
            Ok(Box::new(ResetChecked::new(inner, force)?))
        } else {
            Ok(inner)
        }
    };
    Ok(match spec {
        CriterionSpec::None => Box::new(Always(true)),
        CriterionSpec::Never => Box::new(Always(false)),
        CriterionSpec::Fix { n } => Box::new(FixCriterion::new(*n)?),
        CriterionSpec::Policy { sigma, force, reset_check, kl } => {
            let sigma = sigma.unwrap_or_else(|| CriterionSpec::default_policy_sigma(action_space));
            wrap(Box::new(PolicyCriterion { sigma, kl: *kl }), *force, *reset_check)?
        }
        CriterionSpec::Feature { sigma, force, reset_check } => {
            let sigma = sigma.unwrap_or_else(|| CriterionSpec::default_feature_sigma(action_space));
            wrap(Box::new(FeatureCriterion { sigma, warnings: 0 }), *force, *reset_check)?
        }
        CriterionSpec::Visitation => Box::new(VisitationCriterion::new(RandomProjection::seeded(
            hashing::DEFAULT_COUNT_DIM,
            state_dim,
            run_seed,
            seed::STREAM_CRITERION_HASH,
        )?)),
        CriterionSpec::Info { lambda } => Box::new(InfoMatrixCriterion::new(
            RandomProjection::seeded(hashing::DEFAULT_PSI_DIM, state_dim, run_seed, seed::STREAM_CRITERION_HASH)?,
            action_space,
            horizon,
            *lambda,
        )?),
    })
}
