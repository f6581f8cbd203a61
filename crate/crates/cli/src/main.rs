use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ivgp_core::harness::{self, ExperimentConfig, ExperimentReport, FinalRow};
use ivgp_core::Fitness;

/// Symbolic regression experiments with interval-checked genetic programming.
#[derive(Parser)]
#[command(name = "ivgp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the (method x run) matrix described by a config file.
    Run {
        /// TOML experiment description.
        #[arg(long)]
        config: PathBuf,
        /// Where traces and summaries go; overrides `output_dir` in the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Concurrent runs; 0 means one per CPU core.
        #[arg(long, env = "IVGP_WORKERS", default_value_t = 0)]
        workers: usize,
    },
    /// Rebuild the summary CSVs from the traces in an experiment directory.
    Summarize {
        /// Directory previously written by `ivgp run`.
        dir: PathBuf,
    },
    /// Statistical comparison across finished experiments.
    Analyze {
        /// `final_summary.csv` files, one per problem, with matching method
        /// sets; runs a Friedman rank test over their final test medians.
        #[arg(long, num_args = 1.., value_name = "FILE", required = true)]
        friedman: Vec<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, output_dir, workers } => run(&config, output_dir, workers),
        Command::Summarize { dir } => {
            let report = harness::summarize(&dir)
                .with_context(|| format!("summarizing {}", dir.display()))?;
            print_finals(&report);
            Ok(())
        }
        Command::Analyze { friedman } => analyze(&friedman),
    }
}

fn run(config: &Path, output_dir: Option<PathBuf>, workers: usize) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)
        .with_context(|| format!("loading {}", config.display()))?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if cfg.output_dir.as_os_str().is_empty() {
        bail!("no output directory: set `output_dir` in the config or pass --output-dir");
    }
    let report = harness::run_experiment(&cfg, workers)?;
    println!("results written to {}", cfg.output_dir.display());
    print_finals(&report);
    Ok(())
}

fn print_finals(report: &ExperimentReport) {
    for row in &report.finals {
        let FinalRow { method, problem, runs, train, test, runs_test_over_one, max_test } = row;
        println!(
            "{method:>16}  {problem}  runs {runs}  train {}  test {}  \
             test>1 in {runs_test_over_one}  worst test {max_test}",
            ci(train),
            ci(test),
        );
    }
}

fn ci((median, lo, hi): &(Fitness, Fitness, Fitness)) -> String {
    format!("{median} [{lo}, {hi}]")
}

fn analyze(files: &[PathBuf]) -> Result<()> {
    let (input, test) = harness::friedman_over_files(files)?;
    println!("methods: {}", input.methods.join(", "));
    for (problem, row) in input.problems.iter().zip(&input.matrix) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        println!("  {problem}: {}", cells.join(", "));
    }
    println!(
        "friedman chi2 = {:.4}, df = {}, p = {:.6}",
        test.chi2, test.df, test.p
    );
    Ok(())
}
