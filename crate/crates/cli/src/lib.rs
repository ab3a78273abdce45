//! Command-line front end: vocabulary building, training, anonymization,
//! mechanism audits and evaluation, driven by a JSON config file.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Profile, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "erae", version, about = "Differentially private text rewriting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,

    /// Overrides `paths.output_dir`.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Build the vocabulary from the corpus and print its statistics.
    BuildVocab,
    /// Train (or resume training) a model variant.
    Train {
        /// er-ae (with embedding reward) or ae-dp (without).
        #[arg(long, default_value = "er-ae")]
        variant: String,
    },
    /// Rewrite a text file line by line.
    Anonymize {
        #[arg(long, default_value = "er-ae")]
        method: String,
        #[arg(long)]
        eps: Option<f64>,
        /// Defaults to `paths.corpus`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to `<output_dir>/anonymized.<method>.txt`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact privacy audit of the two-set and exponential mechanisms.
    Audit {
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Evaluate every configured method at one budget.
    Evaluate {
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Evaluate every configured method over the epsilon grid.
    Sweep {
        /// Comma-separated budgets overriding `eval.eps_grid`.
        #[arg(long, value_delimiter = ',')]
        eps_grid: Option<Vec<f64>>,
    },
    /// Write a seeded multi-author toy corpus with matching embeddings.
    SynthCorpus {
        #[arg(long, default_value_t = 60)]
        sentences_per_author: usize,
        #[arg(long, default_value_t = 5)]
        authors: usize,
    },
}

/// Resolves the effective configuration. The profile sets defaults that the
/// config file may override, except for model dimensions, where the profile
/// wins. `--seed` and `--output-dir` override both.
pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = global.profile {
        cfg.apply_profile(p);
    }
    if let Some(path) = &global.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        cfg = cfg.merge_json(&text)?;
    }
    // model dimensions from the profile win over the file
    if let Some(p) = global.profile {
        cfg.apply_profile_dims(p);
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &global.output_dir {
        cfg.paths.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    commands::dispatch(&cfg, &cli.command)
}
