//! `dmsrec`: staged driver for the intent-aware session recommender.

mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Settings;
use crate::error::{CliError, CliResult};
use crate::stages::Ctx;

#[derive(Debug, Parser)]
#[command(name = "dmsrec", version, about = "Intent-aware session recommendation pipeline")]
struct Cli {
    /// TOML config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Work directory; each stage writes into a subdirectory.
    #[arg(long, global = true, default_value = "work")]
    work: PathBuf,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rerun stages even when their manifest is current.
    #[arg(long, global = true)]
    force: bool,
    /// Disable the data-parallel paths.
    #[arg(long, global = true)]
    sequential: bool,
    /// Override any setting, e.g. `--set train.sigma=0.4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct InputArgs {
    /// Interaction file: `user, item, timestamp[, title]`.
    #[arg(long)]
    input: Option<String>,
    /// Optional `item, title` metadata file.
    #[arg(long)]
    metadata: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the deterministic synthetic corpus.
    Synth,
    /// Filter, sessionize, split and augment a raw interaction file.
    Preprocess(InputArgs),
    /// Train the structural backbone alone.
    Pretrain,
    /// Extract top-K candidates for every session.
    Candidates,
    /// Ask the LLM for intents and split them into explicit and latent.
    Mine {
        /// Use the offline rule-based responder.
        #[arg(long)]
        mock: bool,
    },
    /// Encode and pool the mined intents.
    Encode {
        /// Use the hashed bag-of-words encoder.
        #[arg(long)]
        mock: bool,
    },
    /// Train the fused model.
    Train {
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Score the trained model on the test split.
    Eval,
    /// Train and evaluate every ablation variant.
    Ablate,
    /// One run per value of a single hyperparameter.
    Sweep {
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long)]
        values: Option<String>,
    },
    /// synth (without --input), preprocess, pretrain, candidates, mine,
    /// encode, train and eval.
    All {
        #[command(flatten)]
        input: InputArgs,
        /// Offline LLM and encoder.
        #[arg(long)]
        mock: bool,
    },
}

fn overrides(cli: &Cli) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut put = |k: &str, v: String| out.push((k.to_string(), v));
    if let Some(s) = cli.seed {
        put("global.seed", s.to_string());
    }
    if cli.sequential {
        put("global.sequential", "true".into());
    }
    match &cli.command {
        Command::Preprocess(i) | Command::All { input: i, .. } => {
            if let Some(p) = &i.input {
                put("preprocess.input", p.clone());
            }
            if let Some(p) = &i.metadata {
                put("preprocess.metadata", p.clone());
            }
            if let Command::All { mock: true, .. } = cli.command {
                put("mine.client", "mock".into());
                put("encode.encoder", "hash".into());
            }
        }
        Command::Mine { mock: true } => put("mine.client", "mock".into()),
        Command::Encode { mock: true } => put("encode.encoder", "hash".into()),
        Command::Train { ablation: Some(a) } => put("train.ablation", a.clone()),
        Command::Sweep { param, values } => {
            if let Some(p) = param {
                put("sweep.param", p.clone());
            }
            if let Some(v) = values {
                put("sweep.values", v.clone());
            }
        }
        _ => {}
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        put(k.trim(), v.trim().to_string());
    }
    Ok(out)
}

fn run(cli: Cli) -> CliResult<()> {
    let settings = Settings::load(cli.config.as_deref(), &overrides(&cli)?)?;
    std::fs::create_dir_all(&cli.work).map_err(|e| error::io(&cli.work, e))?;
    let mut ctx = Ctx {
        work: cli.work,
        settings,
        force: cli.force,
    };
    match cli.command {
        Command::Synth => ctx.synth().map(drop),
        Command::Preprocess(_) => ctx.preprocess().map(drop),
        Command::Pretrain => ctx.pretrain().map(drop),
        Command::Candidates => ctx.candidates().map(drop),
        Command::Mine { .. } => ctx.mine().map(drop),
        Command::Encode { .. } => ctx.encode().map(drop),
        Command::Train { .. } => ctx.train().map(drop),
        Command::Eval => ctx.eval().map(drop),
        Command::Ablate => ctx.ablate().map(drop),
        Command::Sweep { .. } => ctx.sweep().map(drop),
        Command::All { .. } => ctx.all(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
