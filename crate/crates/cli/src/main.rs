//! `vmap`: survey-driven subgroup value mapping and persona evaluation.

mod commands;
mod config;
mod tables;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::Ctx;

#[derive(Parser)]
#[command(
    name = "vmap",
    version,
    about = "Map subgroup value conflict from survey microdata and evaluate persona-prompted models against it"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey fixture plus a ready-to-run config.
    GenFixture {
        /// Directory to write codebook.json, responses.csv and config.toml.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Score value conflict per question/stratum and rank categories.
    Landscape {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the train/OOD dataset manifest and exports.
    BuildDataset {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run (or replay) the structured numerical evaluation.
    EvalNumeric {
        #[arg(long)]
        config: PathBuf,
        /// Label for the run log and report files.
        #[arg(long)]
        run_label: String,
        /// Which split to evaluate: `ood` or `train`.
        #[arg(long, default_value = "ood")]
        split: String,
        /// Provider section to use, e.g. `evaluatee` or `baseline`.
        #[arg(long, default_value = "evaluatee")]
        provider: String,
        /// Re-score the stored run log instead of querying the provider.
        #[arg(long)]
        replay: bool,
    },
    /// Collect open-ended responses for later judging.
    EvalOpen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_label: String,
        #[arg(long, default_value = "ood")]
        split: String,
        #[arg(long, default_value = "evaluatee")]
        provider: String,
    },
    /// Judge two open-ended runs pairwise (double pass, swapped order).
    Judge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        evaluatee_run: String,
        #[arg(long)]
        baseline_run: String,
        #[arg(long, default_value = "ood")]
        split: String,
        /// Provider section for the judge model.
        #[arg(long, default_value = "judge")]
        provider: String,
    },
    /// Compare two scored numeric runs: deltas, ranks, CIs, disparity.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_a: String,
        #[arg(long)]
        run_b: String,
        #[arg(long, default_value = "ood")]
        split: String,
    },
    /// Summarise human-annotation agreement with the judge.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// CSV with columns item_id, annotator_id, criterion, value.
        #[arg(long)]
        annotations: PathBuf,
        /// Judge run log to compare annotators against.
        #[arg(long)]
        judge_log: Option<PathBuf>,
    },
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenFixture { out, seed } => commands::fixture::run(&out, seed),
        Command::Landscape { config } => commands::landscape::run(&Ctx::load(&config)?),
        Command::BuildDataset { config } => commands::dataset::run(&Ctx::load(&config)?),
        Command::EvalNumeric {
            config,
            run_label,
            split,
            provider,
            replay,
        } => commands::eval::eval_numeric(
            &Ctx::load(&config)?,
            &run_label,
            &split,
            &provider,
            replay,
        ),
        Command::EvalOpen {
            config,
            run_label,
            split,
            provider,
        } => commands::eval::eval_open(&Ctx::load(&config)?, &run_label, &split, &provider),
        Command::Judge {
            config,
            evaluatee_run,
            baseline_run,
            split,
            provider,
        } => commands::judge::run(
            &Ctx::load(&config)?,
            &evaluatee_run,
            &baseline_run,
            &split,
            &provider,
        ),
        Command::Compare {
            config,
            run_a,
            run_b,
            split,
        } => commands::compare::run(&Ctx::load(&config)?, &run_a, &run_b, &split),
        Command::Report {
            config,
            annotations,
            judge_log,
        } => commands::report::run(&Ctx::load(&config)?, &annotations, judge_log.as_deref()),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
