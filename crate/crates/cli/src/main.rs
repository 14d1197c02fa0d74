//! `qcgm`: generate synthetic pairs, train, match and benchmark.
//!
//! Exit status is 0 on success, 1 for invalid input (including bad
//! arguments) and 2 for a numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "qcgm",
    version,
    about = "Graph matching with a quadratic-constraint Frank-Wolfe layer"
)]
struct Cli {
    /// JSON file with optional `train`, `synth` and `solver` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Class {
    Easy,
    Ambiguous,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablate {
    Qc,
    Pairwise,
    Prior,
}

impl Ablate {
    fn variant(self) -> qcgm::Ablation {
        match self {
            Ablate::Qc => qcgm::Ablation::NoQc,
            Ablate::Pairwise => qcgm::Ablation::NoPairwise,
            Ablate::Prior => qcgm::Ablation::NoPrior,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as JSON.
    Synth {
        /// Preset, ignored when the config has a `synth` section.
        #[arg(long, value_enum, default_value = "easy")]
        class: Class,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Outlier nodes appended to both graphs of every pair.
        #[arg(long)]
        outliers: Option<usize>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a dataset; writes params.json and history.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match a single pair.
    Match {
        #[arg(long)]
        pair: PathBuf,
        /// Checkpoint; fresh parameters when absent.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablate: Option<Ablate>,
        /// Also write the solver trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// JSON result file; the result is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a dataset; writes summary.csv, pairs.csv and report.json.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Ablations to run next to the full pipeline; all when absent.
        #[arg(long, value_enum)]
        ablate: Vec<Ablate>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy as outliers are added; writes a CSV with one row per level.
    BenchRobust {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        ks: Vec<usize>,
        /// Outlier coordinate standard deviation before normalization.
        #[arg(long, default_value_t = 10.0)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
