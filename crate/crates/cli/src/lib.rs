//! Command-line driver: embed-cache, train, eval, predict, explain, synth.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "prototraj", version, about = "Prototype-trajectory text classifier")]
pub struct Cli {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Report formats for `explain`, comma separated (json, markdown, svg).
    #[arg(long, global = true, value_delimiter = ',')]
    pub format: Vec<String>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the sentence-embedding cache for the configured datasets.
    EmbedCache {
        /// Datasets to cover (default: train, val and test paths from the config).
        #[arg(long)]
        dataset: Vec<PathBuf>,
    },
    /// Train a model and write it with metrics and loss history.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Accuracy and confusion counts on a labeled dataset.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Default: test_path from the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Class predictions and prototype trajectories.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with = "text")]
        dataset: Option<PathBuf>,
        /// A single raw document instead of a dataset.
        #[arg(long)]
        text: Option<String>,
    },
    /// Write a seeded synthetic twist corpus as JSONL.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1000)]
        documents: usize,
        #[arg(long, default_value_t = 4)]
        min_sentences: usize,
        #[arg(long, default_value_t = 8)]
        max_sentences: usize,
        #[arg(long, default_value_t = 0.5)]
        twist: f64,
        /// last_sentence or majority.
        #[arg(long, default_value = "last_sentence")]
        rule: String,
    },
    /// Prototype-trajectory reports, one file per document and format.
    Explain {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with = "text")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
        /// Explain at most this many documents.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Core(prototraj::Error),
    Config(String),
}

impl CliError {
    /// 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use prototraj::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Config(_) | E::UnknownStrategy { .. }) => 2,
            CliError::Core(E::NonFinite { .. }) => 4,
            CliError::Core(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<prototraj::Error> for CliError {
    fn from(e: prototraj::Error) -> Self {
        CliError::Core(e)
    }
}

/// Resolves the config and runs one command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("worker pool already configured: {e}");
        }
    }
    if !matches!(cli.command, Command::Synth { .. }) {
        std::fs::create_dir_all(&cfg.out_dir).map_err(|e| prototraj::Error::io(&cfg.out_dir, e))?;
    }

    match cli.command {
        Command::Synth {
            output,
            documents,
            min_sentences,
            max_sentences,
            twist,
            rule,
        } => {
            let spec = prototraj::synthetic::SynthSpec {
                num_documents: documents,
                min_sentences,
                max_sentences,
                twist_probability: twist,
                rule: rule.parse()?,
                seed: cfg.seed,
                ..Default::default()
            };
            commands::synth(&spec, &output)
        }
        Command::EmbedCache { dataset } => commands::embed_cache(&cfg, &dataset),
        Command::Train { train, val } => {
            if train.is_some() {
                cfg.train_path = train;
            }
            if val.is_some() {
                cfg.val_path = val;
            }
            commands::train(&cfg)
        }
        Command::Eval { model, dataset } => {
            if model.is_some() {
                cfg.model_path = model;
            }
            commands::eval(&cfg, dataset)
        }
        Command::Predict { model, dataset, text } => {
            if model.is_some() {
                cfg.model_path = model;
            }
            commands::predict(&cfg, commands::Input::resolve(dataset, text))
        }
        Command::Explain {
            model,
            dataset,
            text,
            limit,
        } => {
            if model.is_some() {
                cfg.model_path = model;
            }
            let formats = if cli.format.is_empty() {
                vec!["json".to_string()]
            } else {
                cli.format
            };
            commands::explain(&cfg, commands::Input::resolve(dataset, text), &formats, limit)
        }
    }
}
