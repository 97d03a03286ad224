//! Executing an experiment and writing its result files.
//!
//! Layout of an output directory:
//!
//! - `experiment.json`: the validated experiment (criteria, seeds, run template).
//! - `runs/<criterion>__seed<seed>.jsonl`: one line per record, tagged by `kind`:
//!   `config` (criterion, listed seed, derived run seed, full run config),
//!   `episode` (end step, length, return), `switch` (step, new version),
//!   then `result` or `failure`.
//! - `summary.csv`: one row per criterion.
//! - `metrics.json`: the summary plus RSI without logarithm, per-seed
//!   outcomes, Welch tests on switching costs and failed runs.
//! - `curves.csv`: long format `step,reward,criterion,seed`, one row per
//!   completed episode (its last step and return).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lowswitch::metrics::RunOutcome;
use lowswitch::train;
use lowswitch::RunRecord;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Cell, ExperimentSpec};
use crate::report::{self, ExperimentReport, Failure};
use crate::{CliError, OUTPUT_ROOT_VAR};

/// File-name-safe form of a criterion id.
pub fn slug(criterion: &str) -> String {
    criterion.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Where results go: an explicit directory, else the experiment's `output`,
/// else `<root>/<name>` with root from the environment or `results`.
pub fn output_dir(spec: &ExperimentSpec, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = &spec.output {
        return p.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("results"), PathBuf::from);
    root.join(&spec.name)
}

/// Train every cell on a pool of `jobs` threads. Results come back in cell order.
pub fn execute(cells: &[Cell], jobs: usize) -> Result<Vec<Result<RunRecord, lowswitch::Error>>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(|c| train::run(&c.config)).collect()))
}

fn write_run(path: &Path, cell: &Cell, result: &Result<RunRecord, lowswitch::Error>) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_lines(&mut w, path, cell, result)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_lines(
    w: &mut impl Write,
    path: &Path,
    cell: &Cell,
    result: &Result<RunRecord, lowswitch::Error>,
) -> Result<(), CliError> {
    let mut line = |v: serde_json::Value| writeln!(w, "{v}").map_err(|e| CliError::io(path, e));
    line(json!({
        "kind": "config",
        "criterion": cell.criterion.to_string(),
        "seed": cell.seed,
        "run_seed": cell.config.seed,
        "config": cell.config,
    }))?;
    match result {
        Ok(r) => {
            for e in &r.episodes {
                line(
                    json!({"kind": "episode", "end_step": e.end_step, "length": e.length, "return": e.episode_return}),
                )?;
            }
            for (i, k) in r.switch_steps.iter().enumerate() {
                line(json!({"kind": "switch", "step": k, "version": i + 1}))?;
            }
            line(json!({
                "kind": "result",
                "total_steps": r.total_steps,
                "switching_cost": r.switching_cost,
                "final_version": r.final_version,
                "final_return": r.final_return(),
            }))?;
        }
        Err(e) => line(json!({"kind": "failure", "error": e.to_string()}))?,
    }
    Ok(())
}

fn write_curves(path: &Path, cells: &[Cell], results: &[Result<RunRecord, lowswitch::Error>]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["step", "reward", "criterion", "seed"]).map_err(err)?;
    for (cell, result) in cells.iter().zip(results) {
        let Ok(r) = result else { continue };
        let (criterion, seed) = (cell.criterion.to_string(), cell.seed.to_string());
        for e in &r.episodes {
            w.write_record([e.end_step.to_string(), e.episode_return.to_string(), criterion.clone(), seed.clone()])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Outcome of [`run_experiment`].
#[derive(Debug)]
pub struct ExperimentRun {
    pub dir: PathBuf,
    pub report: ExperimentReport,
}

impl ExperimentRun {
    pub fn failed(&self) -> bool {
        !self.report.failures.is_empty()
    }
}

/// Run every (criterion, seed) cell and write the result files into `dir`.
/// A failing cell is recorded and the others continue.
pub fn run_experiment(spec: &ExperimentSpec, dir: &Path, jobs: usize) -> Result<ExperimentRun, CliError> {
    spec.validate()?;
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| CliError::io(&runs_dir, e))?;
    report::write_json(
        &dir.join("experiment.json"),
        &json!({
            "name": spec.name,
            "env": spec.template.env,
            "agent": spec.template.agent,
            "total_steps": spec.template.total_steps,
            "seeds": spec.seeds,
            "criteria": spec.criteria.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "rsi": spec.rsi,
            "baseline": spec.baseline,
            "sigma_rsi": spec.sigma_rsi,
            "template": spec.template,
        }),
    )?;

    let cells = spec.cells();
    let results = execute(&cells, jobs)?;

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in cells.iter().zip(&results) {
        let id = cell.criterion.to_string();
        write_run(&runs_dir.join(format!("{}__seed{}.jsonl", slug(&id), cell.seed)), cell, result)?;
        match result {
            Ok(r) => outcomes.push((id, cell.seed, RunOutcome::from(r))),
            Err(e) => failures.push(Failure { criterion: id, seed: cell.seed, error: e.to_string() }),
        }
    }
    write_curves(&dir.join("curves.csv"), &cells, &results)?;

    let criteria: Vec<String> = spec.criteria.iter().map(ToString::to_string).collect();
    let baseline = spec.rsi.then_some(spec.baseline.as_str());
    let report = report::build_report(&criteria, &outcomes, failures, baseline, spec.sigma_rsi)?;
    report::write_summary_csv(&dir.join("summary.csv"), &report.rows())?;
    report::write_json(&dir.join("metrics.json"), &report)?;
    Ok(ExperimentRun { dir: dir.to_path_buf(), report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("fix:n=1000"), "fix_n_1000");
        assert_eq!(slug("feature:sigma=0.97,force=500"), "feature_sigma_0.97_force_500");
    }
}
