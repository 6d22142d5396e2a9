//! Command-line workflow tying the toolkit together: synthesize or load
//! models, generate or ingest tagged corpora, run probed forwards, compute
//! metric suites, extract and combine masks, run skip sweeps, and emit
//! deterministic CSV/JSON reports.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod logging;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use ima_core::error::ErrorKind;

use config::RunConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "ima-probe",
    version,
    about = "transformer probing, pruning and skipping workbench"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (JSON; unknown keys are errors).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (overrides the config's out_dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Replaces every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-sequence work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic corpus and/or checkpoint files.
    Gen,
    /// Run probed forwards and emit the metric suite.
    Analyze,
    /// Extract masks, compute IoU grids, alpha-subnet and transfer report.
    Prune,
    /// Sweep skip ratios and start layers, reporting FLOPs and divergence.
    SkipSweep,
    /// Dump activation traces to disk.
    TraceDump,
    /// Analyze previously dumped traces.
    TraceAnalyze,
}

/// Exit code per error class: 2 config, 3 io, 4 numerical.
pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numerical => 4,
    }
}

pub fn run(cli: &Cli) -> ima_core::Result<Vec<PathBuf>> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| ima_core::Error::Config("--config <path> is required".into()))?;
    let mut config = RunConfig::load(config_path)?;
    config.apply_overrides(cli.out.as_deref(), cli.seed);
    config.validate()?;

    if let Some(threads) = cli.threads {
        // Ignore failure when a pool already exists (tests call run twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let out_dir = config.resolved_out_dir()?;
    let written = match cli.command {
        Command::Gen => commands::gen::execute(&config, &out_dir)?,
        Command::Analyze => commands::analyze::execute(&config, &out_dir)?,
        Command::Prune => commands::prune::execute(&config, &out_dir)?,
        Command::SkipSweep => commands::skip_sweep::execute(&config, &out_dir)?,
        Command::TraceDump => commands::trace_dump::execute(&config, &out_dir)?,
        Command::TraceAnalyze => commands::trace_analyze::execute(&config, &out_dir)?,
    };
    for path in &written {
        logging::info(&format!("wrote {}", path.display()));
    }
    Ok(written)
}
