//! Aggregate files: `summary.csv`, `metrics.json`, and re-reading a results
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lowswitch::metrics::{aggregate, PairwiseTest, RunOutcome};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// A run that stopped with an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub criterion: String,
    pub seed: u64,
    pub error: String,
}

/// One row of `summary.csv`. `rsi` is empty when RSI is disabled or the
/// baseline has no successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub criterion: String,
    pub seed_count: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub rsi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionMetrics {
    #[serde(flatten)]
    pub summary: SummaryRow,
    pub rsi_no_log: Option<f64>,
    /// Listed seed and outcome of every successful run.
    pub runs: Vec<(u64, RunOutcome)>,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub baseline: Option<String>,
    pub sigma_rsi: f64,
    pub criteria: Vec<CriterionMetrics>,
    /// Welch tests on switching cost for every pair of criteria.
    pub cost_tests: Vec<PairwiseTest>,
    pub failures: Vec<Failure>,
}

impl ExperimentReport {
    pub fn rows(&self) -> Vec<SummaryRow> {
        self.criteria.iter().map(|c| c.summary.clone()).collect()
    }
}

/// Aggregate `outcomes` (criterion, listed seed, outcome) in the order of
/// `criteria`. Criteria without any successful run are left out.
pub fn build_report(
    criteria: &[String],
    outcomes: &[(String, u64, RunOutcome)],
    failures: Vec<Failure>,
    baseline: Option<&str>,
    sigma_rsi: f64,
) -> Result<ExperimentReport, CliError> {
    let mut by_criterion: BTreeMap<&str, Vec<(u64, RunOutcome)>> = BTreeMap::new();
    for (c, s, o) in outcomes {
        by_criterion.entry(c.as_str()).or_default().push((*s, *o));
    }
    let mut groups = Vec::new();
    for c in criteria {
        if let Some(runs) = by_criterion.get_mut(c.as_str()) {
            runs.sort_by_key(|(s, _)| *s);
            groups.push((c.clone(), runs.clone()));
        }
    }
    let plain: Vec<(String, Vec<RunOutcome>)> =
        groups.iter().map(|(c, runs)| (c.clone(), runs.iter().map(|(_, o)| *o).collect())).collect();
    let baseline = baseline.filter(|b| plain.iter().any(|(c, _)| c == b));
    let reference = match (baseline, plain.first()) {
        (Some(b), _) => b.to_string(),
        (None, Some((first, _))) => first.clone(),
        (None, None) => {
            return Ok(ExperimentReport { baseline: None, sigma_rsi, criteria: vec![], cost_tests: vec![], failures })
        }
    };
    let metrics = aggregate(&plain, &reference, sigma_rsi).map_err(|e| CliError::Runtime(e.to_string()))?;
    let criteria = metrics
        .criteria
        .into_iter()
        .zip(groups)
        .map(|(m, (_, runs))| CriterionMetrics {
            summary: SummaryRow {
                criterion: m.criterion,
                seed_count: m.seed_count,
                reward_mean: m.reward_mean,
                reward_std: m.reward_std,
                cost_mean: m.cost_mean,
                cost_std: m.cost_std,
                rsi: baseline.map(|_| m.rsi),
            },
            rsi_no_log: baseline.map(|_| m.rsi_no_log),
            runs,
        })
        .collect();
    Ok(ExperimentReport {
        baseline: baseline.map(str::to_string),
        sigma_rsi,
        criteria,
        cost_tests: metrics.cost_tests,
        failures,
    })
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Fixed-width table of the summary rows.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<32} {:>5} {:>12} {:>10} {:>12} {:>10} {:>8}\n",
        "criterion", "seeds", "reward", "±", "cost", "±", "rsi"
    );
    for r in rows {
        let rsi = r.rsi.map_or("-".to_string(), |v| format!("{v:.3}"));
        out += &format!(
            "{:<32} {:>5} {:>12.4} {:>10.4} {:>12.1} {:>10.1} {:>8}\n",
            r.criterion, r.seed_count, r.reward_mean, r.reward_std, r.cost_mean, r.cost_std, rsi
        );
    }
    out
}

/// Settings needed to re-aggregate a results directory, from `experiment.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredExperiment {
    pub criteria: Vec<String>,
    pub baseline: Option<String>,
    pub sigma_rsi: f64,
}

fn corrupt(path: &Path, what: &str) -> CliError {
    CliError::Runtime(format!("{}: {what}", path.display()))
}

pub fn read_experiment(dir: &Path) -> Result<StoredExperiment, CliError> {
    let path = dir.join("experiment.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| corrupt(&path, &e.to_string()))?;
    let criteria = v["criteria"]
        .as_array()
        .and_then(|a| a.iter().map(|c| c.as_str().map(str::to_string)).collect::<Option<Vec<_>>>())
        .ok_or_else(|| corrupt(&path, "missing criteria"))?;
    let rsi = v["rsi"].as_bool().unwrap_or(true);
    let baseline = v["baseline"].as_str().filter(|_| rsi).map(str::to_string);
    let sigma_rsi = v["sigma_rsi"].as_f64().ok_or_else(|| corrupt(&path, "missing sigma_rsi"))?;
    Ok(StoredExperiment { criteria, baseline, sigma_rsi })
}

/// One finished cell: criterion, seed and outcome.
pub type StoredRun = (String, u64, RunOutcome);

/// Outcomes and failures recorded in `dir/runs/*.jsonl`.
pub fn read_runs(dir: &Path) -> Result<(Vec<StoredRun>, Vec<Failure>), CliError> {
    let runs = dir.join("runs");
    let mut paths: Vec<_> = fs::read_dir(&runs)
        .map_err(|e| CliError::io(&runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mut cell: Option<(String, u64)> = None;
        for line in text.lines() {
            let v: Value = serde_json::from_str(line).map_err(|e| corrupt(&path, &e.to_string()))?;
            match v["kind"].as_str() {
                Some("config") => {
                    let c = v["criterion"].as_str().ok_or_else(|| corrupt(&path, "config without criterion"))?;
                    let s = v["seed"].as_u64().ok_or_else(|| corrupt(&path, "config without seed"))?;
                    cell = Some((c.to_string(), s));
                }
                Some("result") => {
                    let (c, s) = cell.clone().ok_or_else(|| corrupt(&path, "result before config"))?;
                    let o = RunOutcome {
                        final_reward: v["final_return"].as_f64().ok_or_else(|| corrupt(&path, "bad final_return"))?,
                        switching_cost: v["switching_cost"]
                            .as_u64()
                            .ok_or_else(|| corrupt(&path, "bad switching_cost"))?
                            as usize,
                    };
                    outcomes.push((c, s, o));
                }
                Some("failure") => {
                    let (criterion, seed) = cell.clone().ok_or_else(|| corrupt(&path, "failure before config"))?;
                    failures.push(Failure {
                        criterion,
                        seed,
                        error: v["error"].as_str().unwrap_or_default().to_string(),
                    });
                }
                _ => {}
            }
        }
    }
    Ok((outcomes, failures))
}

/// Re-aggregate a results directory, optionally with another RSI tolerance.
pub fn report_dir(dir: &Path, sigma_rsi: Option<f64>) -> Result<ExperimentReport, CliError> {
    if !dir.join("experiment.json").is_file() {
        return Err(CliError::invalid(format!("{} is not a results directory (no experiment.json)", dir.display())));
    }
    let stored = read_experiment(dir)?;
    let sigma = sigma_rsi.unwrap_or(stored.sigma_rsi);
    if !(0.0..1.0).contains(&sigma) {
        return Err(CliError::invalid(format!("sigma_rsi must lie in [0, 1), got {sigma}")));
    }
    let (outcomes, mut failures) = read_runs(dir)?;
    let order = |c: &str| stored.criteria.iter().position(|x| x == c).unwrap_or(usize::MAX);
    failures.sort_by_key(|f| (order(&f.criterion), f.seed));
    build_report(&stored.criteria, &outcomes, failures, stored.baseline.as_deref(), sigma)
}
