//! Switching cost, RSI, Welch's t-test and multi-seed aggregation.

use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

use crate::error::{Error, Result};
use crate::types::RunRecord;

/// Reward tolerance used when none is given.
pub const DEFAULT_SIGMA_RSI: f64 = 0.2;

/// Inputs of the reward-gated switching improvement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsiInput {
    pub baseline_reward: f64,
    /// At least 1.
    pub baseline_cost: f64,
    pub reward: f64,
    /// At least 1.
    pub cost: f64,
    /// In `[0, 1)`.
    pub sigma: f64,
}

impl RsiInput {
    pub fn new(baseline_reward: f64, baseline_cost: f64, reward: f64, cost: f64, sigma: f64) -> Result<Self> {
        if !(baseline_cost >= 1.0 && cost >= 1.0) {
            return Err(Error::Argument(format!("switching costs must be at least 1, got {baseline_cost} and {cost}")));
        }
        if !(0.0..1.0).contains(&sigma) {
            return Err(Error::Argument(format!("σ_RSI must lie in [0, 1), got {sigma}")));
        }
        if !(baseline_reward.is_finite() && reward.is_finite()) {
            return Err(Error::Argument("rewards must be finite".into()));
        }
        Ok(Self { baseline_reward, baseline_cost, reward, cost, sigma })
    }

    /// `R_J > (1 − sign(R̂)σ)R̂`.
    pub fn reward_passes(&self) -> bool {
        let sign = if self.baseline_reward > 0.0 {
            1.0
        } else if self.baseline_reward < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.reward > (1.0 - sign * self.sigma) * self.baseline_reward
    }
}

/// `I[reward passes] · ln(max(Ĉ/C_J, 1))`, or without the logarithm when
/// `log_variant` is false.
pub fn rsi(input: &RsiInput, log_variant: bool) -> f64 {
    if !input.reward_passes() {
        return 0.0;
    }
    let ratio = (input.baseline_cost / input.cost).max(1.0);
    if log_variant {
        ratio.ln()
    } else {
        ratio
    }
}

/// Number of deployed-version changes, counted from the version log: the
/// initial version 0, the version acting at every step, then the final
/// deployed version.
pub fn switching_cost(record: &RunRecord) -> usize {
    let mut prev = 0u32;
    let mut changes = 0;
    for v in record.deployed_versions.iter().chain(std::iter::once(&record.final_version)) {
        if *v != prev {
            changes += 1;
            prev = *v;
        }
    }
    changes
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() < 2 { 0.0 } else { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) };
    (mean, var)
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> Result<f64> {
    if df.is_nan() || df <= 0.0 || t.is_nan() {
        return Err(Error::Argument(format!("invalid t = {t}, df = {df}")));
    }
    let x = df / (df + t * t);
    checked_beta_reg(df / 2.0, 0.5, x).map_err(|e| Error::numerical(format!("incomplete beta: {e}")))
}

/// Welch's unequal-variance t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument("each sample needs at least two values".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    if sa + sb == 0.0 {
        return Err(Error::DegenerateSample);
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok(WelchTest { t, df, p: student_t_two_sided(t, df)? })
}

/// Final reward and switching cost of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub final_reward: f64,
    pub switching_cost: usize,
}

impl From<&RunRecord> for RunOutcome {
    fn from(r: &RunRecord) -> Self {
        Self { final_reward: r.final_return(), switching_cost: switching_cost(r) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub criterion: String,
    pub seed_count: usize,
    pub reward_mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub rsi: f64,
    pub rsi_no_log: f64,
}

/// Welch test on the switching costs of two criteria. `test` is absent when
/// the comparison is undefined, with the reason in `note`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub test: Option<WelchTest>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub baseline: String,
    pub sigma_rsi: f64,
    pub criteria: Vec<CriterionSummary>,
    pub cost_tests: Vec<PairwiseTest>,
}

/// Per-criterion means and deviations, RSI against the baseline's mean
/// reward and mean cost (costs clamped to at least 1), and Welch tests on
/// switching costs for every pair of criteria. Criteria keep the given order.
pub fn aggregate(groups: &[(String, Vec<RunOutcome>)], baseline: &str, sigma_rsi: f64) -> Result<MetricsReport> {
    let base = groups
        .iter()
        .find(|(id, _)| id == baseline)
        .ok_or_else(|| Error::Config(format!("baseline criterion '{baseline}' is missing from the results")))?;
    if let Some((id, _)) = groups.iter().find(|(_, runs)| runs.is_empty()) {
        return Err(Error::Argument(format!("criterion '{id}' has no runs")));
    }
    let stats = |runs: &[RunOutcome]| {
        let rewards: Vec<f64> = runs.iter().map(|r| r.final_reward).collect();
        let costs: Vec<f64> = runs.iter().map(|r| r.switching_cost as f64).collect();
        (mean_var(&rewards), mean_var(&costs), costs)
    };
    let ((base_reward, _), (base_cost, _), _) = stats(&base.1);
    let mut criteria = Vec::new();
    let mut samples = Vec::new();
    for (id, runs) in groups {
        let ((rm, rv), (cm, cv), costs) = stats(runs);
        let input = RsiInput::new(base_reward, base_cost.max(1.0), rm, cm.max(1.0), sigma_rsi)?;
        criteria.push(CriterionSummary {
            criterion: id.clone(),
            seed_count: runs.len(),
            reward_mean: rm,
            reward_std: rv.sqrt(),
            cost_mean: cm,
            cost_std: cv.sqrt(),
            rsi: rsi(&input, true),
            rsi_no_log: rsi(&input, false),
        });
        samples.push((id, costs));
    }
    let mut cost_tests = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (test, note) = match welch_t_test(&samples[i].1, &samples[j].1) {
                Ok(t) => (Some(t), None),
                Err(Error::DegenerateSample) => (None, Some("both samples have zero variance".to_string())),
                Err(Error::Argument(m)) => (None, Some(m)),
                Err(e) => return Err(e),
            };
            cost_tests.push(PairwiseTest { a: samples[i].0.clone(), b: samples[j].0.clone(), test, note });
        }
    }
    Ok(MetricsReport { baseline: baseline.to_string(), sigma_rsi, criteria, cost_tests })
}
