pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use gcngp::error::Result;

use config::SweepConfig;

#[derive(Debug, Parser)]
#[command(name = "gcngp", version, about = "GP analysis of oversmoothing in deep graph convolutional networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON sweep configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Equilibrium feature distance over a (g, sigma_w2) grid.
    PhaseDiagram,
    /// Critical weight variance by the spectrum and by the equilibrium probe.
    Critical,
    /// GP (and optionally finite-network) test error against depth.
    DepthProfile,
    /// Layer-wise GP distance against finite-width Monte Carlo.
    Validate,
    /// Eigenvalues and propagation depths of the linearized map.
    Spectrum,
}

const DEFAULT_CONFIG: &str = r#"{"graph": {"kind": "complete", "n_nodes": 5}}"#;

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => SweepConfig::load(path)?,
        None => SweepConfig::from_json(DEFAULT_CONFIG)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(gcngp::Error::Config("--threads must be positive".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    std::fs::create_dir_all(&cfg.out)?;
    let out = cfg.out.clone();
    match cli.command {
        Command::PhaseDiagram => commands::phase_diagram(&cfg, &out),
        Command::Critical => commands::critical(&cfg, &out),
        Command::DepthProfile => commands::depth_profile(&cfg, &out),
        Command::Validate => commands::validate(&cfg, &out),
        Command::Spectrum => commands::spectrum(&cfg, &out),
    }
}
