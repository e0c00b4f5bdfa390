//! `rolecirc`: generate role-cross pairs, train toy transformers, attribute
//! and track role circuits over training, and compare or render the
//! resulting graphs.
//!
//! Exit status is 0 on success, 2 when an input or setting is rejected and
//! 1 for any other failure.

mod commands;
mod grid;
mod manifest;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use rolecirc_core::dataset::{Inventory, CONFIG_DIR_ENV};
use tracing_subscriber::EnvFilter;

/// A rejected input, setting or file that the library did not classify.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(
    name = "rolecirc",
    version,
    about = "Role-circuit discovery on toy transformers"
)]
struct Cli {
    /// Root seed; every stochastic stage derives its own stream from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to the number of cores); outputs do not
    /// depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory holding lexicons.toml and templates.toml
    #[arg(long, global = true, env = CONFIG_DIR_ENV)]
    config_dir: Option<PathBuf>,

    /// Settings file: TOML with one table per command, or a manifest from
    /// an earlier run
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate role-cross minimal pairs and a per-role stats table
    GenData(commands::GenDataArgs),
    /// Train a model on a synthetic corpus and save checkpoints
    Train(commands::TrainArgs),
    /// Attribute one checkpoint: graph file plus layer/head heatmap
    Attribute(commands::AttributeArgs),
    /// Attribute every checkpoint of a run and write the signal timeline
    Timeline(commands::TimelineArgs),
    /// Emergence markers and change-points from a timeline
    Emerge(commands::EmergeArgs),
    /// Node, edge and spectral similarity of two graph files
    Compare(commands::CompareArgs),
    /// Causal-flow DOT export of a graph file
    Render(commands::RenderArgs),
}

/// Flags shared by every command.
pub struct Global {
    pub seed: Option<u64>,
    pub config_dir: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

impl Global {
    pub fn inventory(&self) -> Result<(Inventory, &'static str)> {
        match &self.config_dir {
            Some(dir) => Ok((Inventory::load(dir)?, "config-dir")),
            None => Ok((Inventory::builtin(), "builtin")),
        }
    }

    pub fn settings(&self, command: &str) -> Result<settings::FileSettings> {
        match &self.config {
            Some(p) => settings::load(p, command),
            None => Ok(settings::FileSettings::default()),
        }
    }

    /// Flag, then settings file, then 0.
    pub fn seed(&self, file: &settings::FileSettings) -> u64 {
        self.seed.or(file.seed).unwrap_or(0)
    }

    /// Inventory files to digest, when they come from a directory.
    pub fn inventory_files(&self) -> Vec<PathBuf> {
        self.config_dir
            .as_deref()
            .map(|d| {
                [
                    rolecirc_core::dataset::LEXICON_FILE,
                    rolecirc_core::dataset::TEMPLATE_FILE,
                ]
                .iter()
                .map(|f| d.join(f))
                .collect()
            })
            .unwrap_or_default()
    }
}

#[derive(Args)]
pub struct OutDir {
    /// Output directory (created if missing)
    #[arg(long, short)]
    pub out: PathBuf,
}

impl OutDir {
    pub fn create(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| {
            anyhow::anyhow!("cannot create output directory {}: {e}", self.out.display())
        })?;
        Ok(&self.out)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let input = err.chain().any(|e| {
        e.downcast_ref::<InputError>().is_some()
            || e.downcast_ref::<rolecirc_core::Error>()
                .is_some_and(rolecirc_core::Error::is_input_error)
    });
    if input {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(InputError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let global = Global {
        seed: cli.seed,
        config_dir: cli.config_dir,
        config: cli.config,
    };
    match cli.command {
        Command::GenData(a) => commands::gen_data(&global, a),
        Command::Train(a) => commands::train(&global, a),
        Command::Attribute(a) => commands::attribute(&global, a),
        Command::Timeline(a) => commands::timeline(&global, a),
        Command::Emerge(a) => commands::emerge(&global, a),
        Command::Compare(a) => commands::compare(&global, a),
        Command::Render(a) => commands::render(&global, a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
