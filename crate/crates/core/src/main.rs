use std::path::PathBuf;

use clap::{Parser, Subcommand};
use replay_lab::analysis::AnalysisOptions;
use replay_lab::cli::{cmd_analyze, cmd_report, cmd_run, RunOptions, EXIT_ERROR, EXIT_OK};

#[derive(Parser)]
#[command(name = "replay-lab", version, about = "Replay-buffer weighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a config and write CSV results.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Write measured wall times into results.csv (breaks byte-determinism).
        #[arg(long)]
        record_wall_time: bool,
    },
    /// Statistical analysis of a results directory.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        /// Accuracy above which a trial is in the high group.
        #[arg(long, allow_negative_numbers = true)]
        high: Option<f64>,
        /// Accuracy below which a trial is in the low group.
        #[arg(long, allow_negative_numbers = true)]
        low: Option<f64>,
        /// Seed used for slot correlations and trial groups.
        #[arg(long)]
        seed: Option<u64>,
        /// Trial used for slot correlations.
        #[arg(long)]
        trial: Option<u32>,
    },
    /// Accuracy table of a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() {
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        let _ = e.print();
        std::process::exit(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
    });
    let code = match cli.command {
        Command::Run {
            config,
            out,
            parallel,
            record_wall_time,
        } => cmd_run(&RunOptions {
            config,
            out,
            parallelism: parallel,
            record_wall_time,
        }),
        Command::Analyze {
            input,
            high,
            low,
            seed,
            trial,
        } => cmd_analyze(
            &input,
            &AnalysisOptions {
                high_threshold: high,
                low_threshold: low,
                seed,
                trial,
            },
        ),
        Command::Report { input } => cmd_report(&input),
    };
    std::process::exit(code);
}
