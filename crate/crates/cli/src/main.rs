//! `mapcount`: run pipeline stages from a flat key = value config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mapcount::pipeline::{parse_override, run_stage, PipelineConfig, Stage, OUT_DIR_ENV};

#[derive(Parser, Debug)]
#[command(name = "mapcount", version, about = "Map color features and grid-level predictors")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config key (repeatable), e.g. `--set k_std=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Cap on worker threads.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Clip tiles into grid cells and write the manifest.
    Clip,
    /// Per-cell K-means to k_local colors.
    Simplify,
    /// Build the shared k_std palette.
    Standardize,
    /// Color counts and HHI per cell.
    Featurize,
    /// Labels from regional totals and/or land cover.
    Labelize,
    /// Split and fit the configured models.
    Train,
    /// Predict every cell with every trained model.
    Predict,
    /// Hold-out R² and per-class recall.
    Evaluate,
    /// Per-color effects and heatmaps.
    Interpret,
    /// Generate a synthetic corpus.
    Synth,
    /// k_std sweep emitting a k-vs-R² table.
    Sweep,
    /// clip through interpret in order.
    Run,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::Clip => Stage::Clip,
            Command::Simplify => Stage::Simplify,
            Command::Standardize => Stage::Standardize,
            Command::Featurize => Stage::Featurize,
            Command::Labelize => Stage::Labelize,
            Command::Train => Stage::Train,
            Command::Predict => Stage::Predict,
            Command::Evaluate => Stage::Evaluate,
            Command::Interpret => Stage::Interpret,
            Command::Synth => Stage::Synth,
            Command::Sweep => Stage::Sweep,
            Command::Run => Stage::Run,
        }
    }
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("mapcount: error: {}", msg.replace('\n', " "));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("invalid arguments");
            return fail(EXIT_USAGE, line.trim_start_matches("error: "));
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let mut overrides = Vec::new();
    for s in &cli.overrides {
        match parse_override(s) {
            Ok(kv) => overrides.push(kv),
            Err(e) => return fail(EXIT_USAGE, &e.to_string()),
        }
    }
    if let Some(j) = cli.jobs {
        overrides.push(("jobs".into(), j.to_string()));
    }
    let env_out = std::env::var(OUT_DIR_ENV).ok();
    let cfg = match PipelineConfig::load(cli.config.as_deref(), env_out.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => return fail(if e.is_usage() { EXIT_USAGE } else { EXIT_DATA }, &e.to_string()),
    };

    match run_stage(&cfg, cli.command.stage()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(if e.is_usage() { EXIT_USAGE } else { EXIT_DATA }, &e.to_string()),
    }
}
