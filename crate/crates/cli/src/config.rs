//! Experiment files.
//!
//! TOML with three sections; only `[experiment]` is required.
//!
//! ```toml
//! [experiment]
//! name = "grid"                 # defaults to the file stem
//! env = "gridworld5"
//! agent = "dqn_lite"
//! total_steps = 50000
//! seeds = [0, 1, 2]
//! criteria = ["none", "fix:n=1000", "feature:sigma=0.97"]
//! output = "results/grid"       # optional
//! jobs = 2                      # optional, worker threads
//!
//! [training]                    # optional overrides of the agent defaults
//! warmup = 5000
//! update_period = 4
//! gradient_steps = 2
//! batch_size = 32
//! buffer_capacity = 50000
//! gamma = 0.99
//! beta = 0.01
//! learning_rate = 0.001
//! hidden = [64, 64]
//! target_period = 200
//! check_window = 10000
//! check_batch = 512
//!
//! [report]
//! rsi = true
//! baseline = "none"
//! sigma_rsi = 0.2
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lowswitch::criteria::CriterionSpec;
use lowswitch::metrics::DEFAULT_SIGMA_RSI;
use lowswitch::seed;
use lowswitch::train::RunConfig;
use serde::Serialize;
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub name: String,
    /// Settings shared by every run; `criterion` and `seed` are filled per cell.
    pub template: RunConfig,
    pub seeds: Vec<u64>,
    pub criteria: Vec<CriterionSpec>,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub rsi: bool,
    pub baseline: String,
    pub sigma_rsi: f64,
}

/// One (criterion, seed) run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub criterion: CriterionSpec,
    pub seed: u64,
    pub config: RunConfig,
}

/// Seed of the run for `criterion` at listed seed `seed`. Adding or removing
/// other criteria or seeds leaves it unchanged.
pub fn run_seed(seed: u64, criterion: &CriterionSpec) -> u64 {
    seed::derive(seed, seed::stable_hash(criterion.to_string().as_bytes()))
}

impl ExperimentSpec {
    /// Criterion-major list of runs.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.criteria.len() * self.seeds.len());
        for c in &self.criteria {
            for s in &self.seeds {
                let mut config = self.template.clone();
                config.criterion = c.clone();
                config.seed = run_seed(*s, c);
                out.push(Cell { criterion: c.clone(), seed: *s, config });
            }
        }
        out
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = self.template.problems();
        if self.seeds.is_empty() {
            p.push("seed list is empty".into());
        }
        let mut seen = BTreeSet::new();
        for s in &self.seeds {
            if !seen.insert(*s) {
                p.push(format!("seed {s} is listed more than once"));
            }
        }
        if self.criteria.is_empty() {
            p.push("criterion list is empty".into());
        }
        let ids: Vec<String> = self.criteria.iter().map(ToString::to_string).collect();
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id) {
                p.push(format!("criterion '{id}' is listed more than once"));
            }
        }
        if self.rsi && !ids.contains(&self.baseline) {
            p.push(format!("RSI needs the baseline criterion '{}' in the criterion list", self.baseline));
        }
        if !(0.0..1.0).contains(&self.sigma_rsi) {
            p.push(format!("sigma_rsi must lie in [0, 1), got {}", self.sigma_rsi));
        }
        if self.jobs == Some(0) {
            p.push("jobs must be at least 1".into());
        }
        p
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(p))
        }
    }

    /// Replace the criterion list with parsed `ids`.
    pub fn override_criteria(&mut self, ids: &[String]) -> Result<(), CliError> {
        let (parsed, errors) = parse_criteria(ids.iter().map(String::as_str));
        if !errors.is_empty() {
            return Err(CliError::Validation(errors));
        }
        self.criteria = parsed;
        Ok(())
    }
}

fn parse_criteria<'a>(ids: impl Iterator<Item = &'a str>) -> (Vec<CriterionSpec>, Vec<String>) {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for id in ids {
        match id.parse::<CriterionSpec>() {
            Ok(c) => out.push(c),
            Err(e) => errors.push(e.to_string()),
        }
    }
    (out, errors)
}

/// Reads typed values out of one TOML table, recording every problem.
struct Section<'e> {
    name: &'static str,
    table: Table,
    errors: &'e mut Vec<String>,
}

impl<'e> Section<'e> {
    fn new(name: &'static str, table: Table, errors: &'e mut Vec<String>) -> Self {
        Self { name, table, errors }
    }

    fn bad(&mut self, key: &str, want: &str, got: &Value) {
        self.errors.push(format!("[{}] {key}: expected {want}, got {got}", self.name));
    }

    fn missing(&mut self, key: &str) {
        self.errors.push(format!("[{}] {key} is required", self.name));
    }

    fn usize(&mut self, key: &str) -> Option<usize> {
        let v = self.table.remove(key)?;
        match v {
            Value::Integer(i) if i >= 0 => Some(i as usize),
            other => {
                self.bad(key, "a nonnegative integer", &other);
                None
            }
        }
    }

    fn f64(&mut self, key: &str) -> Option<f64> {
        let v = self.table.remove(key)?;
        match v {
            Value::Integer(i) => Some(i as f64),
            Value::Float(f) if f.is_finite() => Some(f),
            other => {
                self.bad(key, "a finite number", &other);
                None
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        let v = self.table.remove(key)?;
        match v {
            Value::String(s) => Some(s),
            other => {
                self.bad(key, "a string", &other);
                None
            }
        }
    }

    fn bool(&mut self, key: &str) -> Option<bool> {
        let v = self.table.remove(key)?;
        match v {
            Value::Boolean(b) => Some(b),
            other => {
                self.bad(key, "true or false", &other);
                None
            }
        }
    }

    fn list<T>(&mut self, key: &str, want: &str, item: impl Fn(&Value) -> Option<T>) -> Option<Vec<T>> {
        let v = self.table.remove(key)?;
        let parsed = match &v {
            Value::Array(items) => items.iter().map(&item).collect::<Option<Vec<T>>>(),
            _ => None,
        };
        if parsed.is_none() {
            self.bad(key, want, &v);
        }
        parsed
    }

    fn finish(self) {
        for key in self.table.keys() {
            self.errors.push(format!("[{}] unknown key '{key}'", self.name));
        }
    }
}

fn nonneg(v: &Value) -> Option<u64> {
    v.as_integer().and_then(|i| u64::try_from(i).ok())
}

/// Parse and validate an experiment file. On failure every problem found is
/// returned, not just the first.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, CliError> {
    parse_config_named(text, "experiment")
}

/// Read an experiment file; an unnamed experiment takes the file stem as its name.
pub fn load_config(path: &Path) -> Result<ExperimentSpec, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
    parse_config_named(&text, stem)
}

fn parse_config_named(text: &str, default_name: &str) -> Result<ExperimentSpec, CliError> {
    let mut root: Table = text.parse().map_err(|e: toml::de::Error| CliError::invalid(format!("TOML syntax: {e}")))?;
    let mut errors = Vec::new();
    let take_section = |root: &mut Table, name: &str, errors: &mut Vec<String>| match root.remove(name) {
        None => Table::new(),
        Some(Value::Table(t)) => t,
        Some(other) => {
            errors.push(format!("'{name}' must be a section, got {other}"));
            Table::new()
        }
    };
    let experiment = take_section(&mut root, "experiment", &mut errors);
    if experiment.is_empty() && !root.is_empty() && errors.is_empty() {
        errors.push("missing [experiment] section".into());
    }
    let training = take_section(&mut root, "training", &mut errors);
    let report = take_section(&mut root, "report", &mut errors);
    for key in root.keys() {
        errors.push(format!("unknown top-level key '{key}' (sections: experiment, training, report)"));
    }

    let given: BTreeSet<String> = experiment.keys().cloned().collect();
    let mut s = Section::new("experiment", experiment, &mut errors);
    let name = s.string("name").unwrap_or_else(|| default_name.to_string());
    let env = s.string("env");
    let agent = s.string("agent");
    let total_steps = s.usize("total_steps");
    let seeds = s.list("seeds", "a list of nonnegative integers", nonneg);
    let criteria_ids = s.list("criteria", "a list of criterion ids", |v| v.as_str().map(str::to_string));
    let output = s.string("output").map(PathBuf::from);
    let jobs = s.usize("jobs");
    for key in ["env", "agent", "total_steps", "seeds", "criteria"] {
        if !given.contains(key) {
            s.missing(key);
        }
    }
    s.finish();

    let agent_id = agent.clone().unwrap_or_default();
    let mut template =
        RunConfig::new(&env.clone().unwrap_or_default(), &agent_id, CriterionSpec::None, total_steps.unwrap_or(0), 0);
    let mut t = Section::new("training", training, &mut errors);
    if let Some(v) = t.usize("warmup") {
        template.warmup = v;
    }
    if let Some(v) = t.usize("update_period") {
        template.update_period = v;
    }
    if let Some(v) = t.usize("gradient_steps") {
        template.gradient_steps = v;
    }
    if let Some(v) = t.usize("batch_size") {
        template.batch_size = v;
    }
    if let Some(v) = t.usize("buffer_capacity") {
        template.buffer_capacity = v;
    }
    if let Some(v) = t.f64("gamma") {
        template.gamma = v;
    }
    if let Some(v) = t.f64("beta") {
        template.beta = v;
    }
    if let Some(v) = t.f64("learning_rate") {
        template.learning_rate = Some(v);
    }
    if let Some(v) = t.list("hidden", "a list of layer widths", |v| nonneg(v).map(|n| n as usize)) {
        template.hidden = Some(v);
    }
    if let Some(v) = t.usize("target_period") {
        template.target_period = v;
    }
    if let Some(v) = t.usize("check_window") {
        template.check_window = v;
    }
    if let Some(v) = t.usize("check_batch") {
        template.check_batch = v;
    }
    t.finish();

    let mut r = Section::new("report", report, &mut errors);
    let rsi = r.bool("rsi").unwrap_or(true);
    let baseline = r.string("baseline").unwrap_or_else(|| "none".to_string());
    let sigma_rsi = r.f64("sigma_rsi").unwrap_or(DEFAULT_SIGMA_RSI);
    r.finish();

    let (criteria, criterion_errors) = parse_criteria(criteria_ids.iter().flatten().map(String::as_str));
    let criteria_bad = !criterion_errors.is_empty();
    errors.extend(criterion_errors);

    let (env_given, agent_given, steps_given) = (env.is_some(), agent.is_some(), total_steps.is_some());
    let lists_given = seeds.is_some() && criteria_ids.is_some();
    let spec = ExperimentSpec {
        name,
        template,
        seeds: seeds.unwrap_or_default(),
        criteria,
        output,
        jobs,
        rsi,
        baseline,
        sigma_rsi,
    };
    // Skip consequences of keys already reported as missing or malformed.
    for p in spec.problems() {
        let follows = (!env_given && p.starts_with("unknown env"))
            || (!agent_given && p.starts_with("unknown agent"))
            || (!steps_given && p.starts_with("total_steps"))
            || (!lists_given && (p.ends_with("list is empty") || p.starts_with("RSI needs")))
            || (criteria_bad && (p.starts_with("criterion list") || p.starts_with("RSI needs")));
        if !follows && !errors.contains(&p) {
            errors.push(p);
        }
    }
    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(CliError::Validation(errors))
    }
}
