use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cmd_evaluate;
mod cmd_phantom;
mod cmd_postprocess;
mod cmd_preprocess;
mod cmd_review;
mod cmd_stats;
mod failure;
mod manifest;

use failure::{CmdResult, ResultExt};
use hnlevels_core::{default_schema, load_schema, LevelSchema};

/// Lymph node level label volume toolkit.
#[derive(Parser)]
#[command(name = "hnlevels", version, about)]
struct Cli {
    /// Level schema TOML; the built-in 20-level schema when omitted.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop a CT volume, mask the body by Otsu thresholding and blank the rest.
    Preprocess(cmd_preprocess::Args),
    /// Largest component per level and slice-plane adjustment.
    Postprocess(cmd_postprocess::Args),
    /// Dice, surface Dice and Hausdorff distance against a reference set.
    Evaluate(cmd_evaluate::Args),
    /// Paired or unpaired tests on CSV data.
    Stats(cmd_stats::Args),
    /// Synthetic CT and label phantoms.
    Phantom(cmd_phantom::Args),
    /// Build a blinded review plan.
    ReviewPlan(cmd_review::PlanArgs),
    /// Serve a review plan over HTTP.
    Serve(cmd_review::ServeArgs),
}

pub struct Globals {
    pub schema: LevelSchema,
    pub seed: u64,
    pub threads: usize,
}

fn run(cli: Cli) -> CmdResult {
    let schema = match &cli.schema {
        Some(p) => load_schema(p).input_err(|| format!("schema {}", p.display()))?,
        None => default_schema(),
    };
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .internal_err(|| "thread pool")?;
    }
    let g = Globals {
        schema,
        seed: cli.seed,
        threads: cli.threads,
    };
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess::run(&g, a),
        Command::Postprocess(a) => cmd_postprocess::run(&g, a),
        Command::Evaluate(a) => cmd_evaluate::run(&g, a),
        Command::Stats(a) => cmd_stats::run(&g, a),
        Command::Phantom(a) => cmd_phantom::run(&g, a),
        Command::ReviewPlan(a) => cmd_review::plan(&g, a),
        Command::Serve(a) => cmd_review::serve(&g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
