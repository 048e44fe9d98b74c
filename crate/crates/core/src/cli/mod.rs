//! `accelerator` command line: one subcommand per pipeline stage, stages talk
//! through JSONL files only.

mod config;
mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{AlternatorSettings, EvalSettings, Paths, PipelineConfig, ServeSettings};
pub use stages::{alternate, build_store, eval, filter, mine, pipeline, profiles, read_jsonl, serve, write_jsonl};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage,
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Stage { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "accelerator",
    version,
    about = "Query-journey mining and related-search serving"
)]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,

    /// Pipeline config (JSON).
    #[arg(long, global = true, env = "ACCELERATOR_CONFIG")]
    pub config: Option<PathBuf>,

    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Answer LLM prompts from this fixture file instead of the endpoint.
    #[arg(long, global = true)]
    pub mock_llm: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Events -> converted query chains.
    Mine,
    /// Events -> query item profiles.
    Profiles,
    /// Chains + profiles -> intent-filtered, pruned journeys.
    Filter,
    /// Journeys -> suggestion candidates from the LLM.
    Alternate,
    /// Candidates -> store snapshot.
    BuildStore,
    /// Serve the store snapshot over HTTP.
    Serve,
    /// Compare LLM suggestions against mined-only suggestions.
    Eval,
    /// mine, profiles, filter, alternate, build-store and eval in order.
    Pipeline,
}

/// Loads the config with CLI overrides applied.
pub fn resolve_config(args: &Args) -> Result<PipelineConfig, CliError> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("no config given (--config or ACCELERATOR_CONFIG)".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(fixtures) = &args.mock_llm {
        cfg.alternator.mock = true;
        cfg.paths.fixtures = Some(fixtures.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &Args) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    match args.command {
        Command::Mine => mine(&cfg).map(drop),
        Command::Profiles => profiles(&cfg).map(drop),
        Command::Filter => filter(&cfg).map(drop),
        Command::Alternate => alternate(&cfg).map(drop),
        Command::BuildStore => build_store(&cfg).map(drop),
        Command::Serve => serve(&cfg),
        Command::Eval => eval(&cfg).map(drop),
        Command::Pipeline => pipeline(&cfg),
    }
}
