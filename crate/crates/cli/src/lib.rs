//! Command-line front end for `wavemotion`.
//!
//! The binary is a thin wrapper around [`run_from_args`], which the tests
//! also call in-process.

pub mod commands;
pub mod config;
pub mod csv_io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use wavemotion::{Error, ErrorKind};

use crate::commands::Context;
use crate::config::{parse_override, Layers, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "wavemotion", version, about = "Heave motion forecasting with an LSTM and Monte-Carlo dropout")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, env = "WAVEMOTION_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Use the small desk profile instead of the reference settings.
    #[arg(long, global = true)]
    pub desk_profile: bool,
    /// Worker threads for replica evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Override one setting, e.g. `-s train.max_epochs=10`. Repeatable.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the wave/heave cases, fold manifest and spectral checks.
    Synth,
    /// Train one checkpoint per horizon, noise level and fold.
    Train,
    /// Forecast one window with Monte-Carlo dropout.
    Predict {
        /// Checkpoint file (default: derived from predict.horizon/noise_level/fold).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Case id (default: first test case).
        #[arg(long)]
        case: Option<String>,
        /// Window anchor index (default: random admissible anchor).
        #[arg(long)]
        anchor: Option<usize>,
    },
    /// Test-set EV, CI coverage, ensemble covariance and Gaussianity tables.
    Eval,
    /// EV on noisy test inputs for models trained at several noise levels.
    NoiseSweep,
    /// Finite-difference gradient check of a small network.
    Gradcheck,
    /// Print every setting with its default.
    Settings,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Predict { .. } => "predict",
            Command::Eval => "eval",
            Command::NoiseSweep => "noise-sweep",
            Command::Gradcheck => "gradcheck",
            Command::Settings => "settings",
        }
    }
}

/// Exit code for a failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let kind = err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::kind);
    match kind {
        Some(ErrorKind::Usage) => 2,
        Some(ErrorKind::Config) => 3,
        Some(ErrorKind::Data) => 4,
        Some(ErrorKind::Numeric) => 5,
        Some(ErrorKind::Io) => 6,
        None if err.chain().any(|e| e.downcast_ref::<std::io::Error>().is_some()) => 6,
        None => 1,
    }
}

fn override_pair(text: &str) -> wavemotion::Result<(String, toml::Value)> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {text:?}")))?;
    let key = key.trim();
    Ok((key.to_string(), parse_override(key, value.trim())?))
}

/// Resolves the configuration for a parsed command line.
pub fn resolve_config(cli: &Cli, env: impl Fn(&str) -> Option<String>) -> anyhow::Result<RunConfig> {
    let mut layers = Layers::default();
    if let Some(path) = &cli.global.config {
        layers.load_file(path)?;
    }
    layers.from_env(env)?;
    if cli.global.desk_profile {
        layers.cli.push(("profile".into(), toml::Value::String("desk".into())));
    }
    if let Some(seed) = cli.global.seed {
        let seed = i64::try_from(seed).map_err(|_| Error::Usage(format!("--seed {seed} is too large")))?;
        layers.cli.push(("seed".into(), toml::Value::Integer(seed)));
    }
    for text in &cli.global.set {
        layers.cli.push(override_pair(text)?);
    }
    if let Command::Predict { checkpoint, case, anchor } = &cli.command {
        if let Some(p) = checkpoint {
            layers.cli.push(("predict.checkpoint".into(), toml::Value::String(p.display().to_string())));
        }
        if let Some(c) = case {
            layers.cli.push(("predict.case".into(), toml::Value::String(c.clone())));
        }
        if let Some(a) = anchor {
            layers.cli.push(("predict.anchor".into(), toml::Value::Integer(*a as i64)));
        }
    }
    Ok(RunConfig::resolve(&layers)?)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(&cli, |k| std::env::var(k).ok())?;
    if let Command::Settings = cli.command {
        print!("{}", RunConfig::reference_table());
        return Ok(());
    }
    let ctx = Context { cfg, out: cli.global.out.clone(), force: cli.global.force };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build()?;
    log::debug!("running {} with {} threads", cli.command.name(), pool.current_num_threads());
    pool.install(|| match cli.command {
        Command::Synth => commands::cmd_synth(&ctx),
        Command::Train => commands::cmd_train(&ctx),
        Command::Predict { .. } => commands::cmd_predict(&ctx),
        Command::Eval => commands::cmd_eval(&ctx),
        Command::NoiseSweep => commands::cmd_noise_sweep(&ctx),
        Command::Gradcheck => commands::cmd_gradcheck(&ctx),
        Command::Settings => unreachable!(),
    })
}

/// Parses arguments, runs the command and returns the process exit code.
/// Errors are reported on stderr.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}
