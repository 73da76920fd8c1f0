use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use xagents::cli::{self, BenchArgs, CliError, ExplainArgs};

#[derive(Parser)]
#[command(name = "xagents", version, about = "Rule-based multi-agent orchestration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one task end to end and print the final result.
    Run {
        /// Task document path, or `-` to read from standard input.
        #[arg(long)]
        task: String,
        #[arg(long)]
        config: PathBuf,
        /// Trace file to write (.jsonl).
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run a benchmark dataset and write a score report.
    Bench {
        /// Task family: trivia, logic, or codenames.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        path: PathBuf,
        /// Trivia question count (5 or 10); validated against the dataset.
        #[arg(long)]
        n: Option<usize>,
        /// Baseline mean score (percent) for the delta column.
        #[arg(long)]
        baseline: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Report name (defaults to the dataset family).
        #[arg(long)]
        name: Option<String>,
        /// Reuse completed traces in --out and cache live calls.
        #[arg(long)]
        resume: bool,
    },
    /// Attribute run outcomes to domain memberships and emit the table.
    Explain {
        /// Directory of .jsonl traces.
        #[arg(long)]
        traces: PathBuf,
        /// Bench report or `[{run_id, score}]` file.
        #[arg(long)]
        scores: PathBuf,
        /// exact (coalition enumeration) or sampled (permutation sampling).
        #[arg(long, default_value = "exact")]
        mode: String,
        /// Merge consecutive runs into composite samples of this size.
        #[arg(long, default_value_t = 1)]
        group: usize,
        /// Permutation budget for sampled mode.
        #[arg(long, default_value_t = 2000)]
        permutations: u64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "attribution")]
        name: String,
    },
    /// Structurally validate an execution-graph document.
    Validate {
        #[arg(long)]
        plan: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            task,
            config,
            trace_out,
        } => {
            let text = cli::cmd_run(&task, &config, trace_out.as_deref())?;
            println!("{text}");
            Ok(())
        }
        Command::Bench {
            dataset,
            path,
            n,
            baseline,
            out,
            config,
            name,
            resume,
        } => {
            let report = cli::cmd_bench(&BenchArgs {
                kind: &dataset,
                path: &path,
                n,
                baseline,
                out_dir: &out,
                config_path: &config,
                name: name.as_deref(),
                resume,
            })?;
            println!(
                "{} instances, mean score {:.1}%",
                report.instances, report.aggregate.mean_score_pct
            );
            if let Some(delta) = report.aggregate.delta_pct {
                println!("Δ vs baseline: {delta:+.1}%");
            }
            for warning in &report.aggregate.warnings {
                eprintln!("warning: {warning}");
            }
            Ok(())
        }
        Command::Explain {
            traces,
            scores,
            mode,
            group,
            permutations,
            seed,
            out,
            config,
            name,
        } => {
            let report = cli::cmd_explain(&ExplainArgs {
                trace_dir: &traces,
                scores_path: &scores,
                mode: &mode,
                group,
                permutations,
                seed,
                out_dir: &out,
                config_path: config.as_deref(),
                name: &name,
            })?;
            println!(
                "{} samples, max efficiency residual {:.3e}",
                report.samples.len(),
                report.max_efficiency_residual
            );
            println!("wrote {}", report.csv_path);
            Ok(())
        }
        Command::Validate { plan } => {
            cli::cmd_validate(&plan)?;
            println!("ok");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
