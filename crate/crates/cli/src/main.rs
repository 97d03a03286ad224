use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lowswitch::criteria::theorem1_check;
use lowswitch_cli::report::{format_table, report_dir, write_json, write_summary_csv};
use lowswitch_cli::runner::{output_dir, run_experiment};
use lowswitch_cli::{load_config, selftest, CliError};

#[derive(Parser)]
#[command(name = "lowswitch", version, about = "Low-switching-cost RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (criterion, seed) cell of an experiment file.
    Run {
        config: PathBuf,
        /// Replace the seed list, e.g. `--seeds 0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory (default: config `output`, then $LOWSWITCH_OUT/<name>, then results/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: config `jobs`, then the number of CPUs).
        #[arg(long)]
        jobs: Option<usize>,
        /// Replace the criterion list; repeatable.
        #[arg(long = "criterion")]
        criteria: Vec<String>,
    },
    /// Recompute summary.csv and metrics.json from a results directory.
    Report {
        dir: PathBuf,
        /// Reward tolerance of the RSI pass test.
        #[arg(long)]
        sigma_rsi: Option<f64>,
    },
    /// Evaluate the feature-similarity counterexample for given k and alpha.
    Theorem1 {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        alpha: f64,
    },
    /// Run the built-in numerical checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Run { config, seeds, out, jobs, criteria } => {
            let mut spec = load_config(&config)?;
            if let Some(seeds) = seeds {
                spec.seeds = seeds;
            }
            if !criteria.is_empty() {
                spec.override_criteria(&criteria)?;
            }
            if jobs == Some(0) {
                return Err(CliError::invalid("--jobs must be positive"));
            }
            spec.validate()?;
            let jobs =
                jobs.or(spec.jobs).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let dir = output_dir(&spec, out.as_deref());
            let run = run_experiment(&spec, &dir, jobs)?;
            print!("{}", format_table(&run.report.rows()));
            for f in &run.report.failures {
                eprintln!("failed: {} seed {}: {}", f.criterion, f.seed, f.error);
            }
            println!("results in {}", run.dir.display());
            Ok(if run.failed() { 2 } else { 0 })
        }
        Command::Report { dir, sigma_rsi } => {
            let report = report_dir(&dir, sigma_rsi)?;
            write_summary_csv(&dir.join("summary.csv"), &report.rows())?;
            write_json(&dir.join("metrics.json"), &report)?;
            print!("{}", format_table(&report.rows()));
            Ok(0)
        }
        Command::Theorem1 { k, alpha } => {
            let outcome = theorem1_check(k, alpha).map_err(|e| CliError::invalid(e.to_string()))?;
            println!("k = {k}, alpha = {alpha}");
            println!("feature similarity: {}", outcome.similarity);
            println!("prediction error:   {}", outcome.prediction_error);
            Ok(0)
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            let mut failed = false;
            for c in &checks {
                match &c.outcome {
                    Ok(detail) => println!("PASS {}: {detail}", c.name),
                    Err(detail) => {
                        failed = true;
                        println!("FAIL {}: {detail}", c.name);
                    }
                }
            }
            Ok(if failed { 2 } else { 0 })
        }
    }
}
