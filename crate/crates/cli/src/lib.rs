//! Command-line front end: `synth`, `train`, `eval`, `stats` and `ablate`.
//!
//! Exit codes: 0 success, 2 user or configuration error, 3 I/O error,
//! 4 numeric failure.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use depthlift_core::dataset::Protocol;
use depthlift_core::{Error, ErrorCategory, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{
    AblateConfig, AlignMode, EvalConfig, Seeded, StatsConfig, SynthConfig, TrainCmdConfig,
};
use crate::manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "depthlift",
    version,
    about = "Depth-augmented 2D-to-3D pose lifting toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run seed; overrides the `seed` key of the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML config file for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera dataset with simulated depth.
    Synth,
    /// Train a lifting network on a protocol's training subjects.
    Train {
        /// Directory written by `synth`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<Protocol>,
        /// Train the 2D-only network (no depth input).
        #[arg(long)]
        no_depth: bool,
    },
    /// Evaluate a trained model on a protocol's test subjects.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long, value_enum)]
        alignment: Option<AlignMode>,
    },
    /// Per-(camera, action, joint) correlation and normality analysis.
    Stats {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one model per depth-correlation level and fit the trend.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<Protocol>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Stats { .. } => "stats",
            Command::Ablate { .. } => "ablate",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.category() {
        ErrorCategory::User => EXIT_USER,
        ErrorCategory::Io => EXIT_IO,
        ErrorCategory::Numeric => EXIT_NUMERIC,
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

/// Load the config, apply flag overrides, then either print it or run the
/// command and write the manifest next to its outputs.
fn dispatch<C, F>(
    g: &GlobalArgs,
    argv: &[String],
    name: &str,
    adjust: impl FnOnce(&mut C),
    run: F,
) -> Result<()>
where
    C: DeserializeOwned + Serialize + Default + Seeded,
    F: FnOnce(&C, &Path) -> Result<commands::Io>,
{
    let mut cfg: C = config::load(g.config.as_deref())?;
    if let Some(s) = g.seed {
        *cfg.seed_mut() = s;
    }
    adjust(&mut cfg);
    if g.dump_config {
        print!("{}", config::to_toml(&cfg)?);
        return Ok(());
    }
    let seed = *cfg.seed_mut();
    let mut m = RunManifest::new(name, argv.to_vec(), &cfg, seed)?;
    let start = Instant::now();
    let result = run(&cfg, &g.out);
    if let Some(cfg_path) = &g.config {
        m.inputs.push(cfg_path.clone());
    }
    if let Ok(io) = &result {
        m.inputs.extend(io.inputs.iter().cloned());
        m.outputs.clone_from(&io.outputs);
    }
    m.finish(start.elapsed(), result.as_ref().err());
    if g.out.is_dir() {
        m.write(&g.out)?;
    }
    result.map(|_| ())
}

/// Run a parsed command line.
pub fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    let g = &cli.global;
    let name = cli.command.name();
    match &cli.command {
        Command::Synth => dispatch::<SynthConfig, _>(g, argv, name, |_| {}, commands::synth),
        Command::Train {
            data,
            protocol,
            no_depth,
        } => dispatch::<TrainCmdConfig, _>(
            g,
            argv,
            name,
            |c| {
                if let Some(p) = protocol {
                    c.protocol = *p;
                }
                if *no_depth {
                    c.net.use_depth = false;
                }
            },
            |c, out| commands::train(c, required(data, "data")?, out),
        ),
        Command::Eval {
            model,
            data,
            protocol,
            alignment,
        } => dispatch::<EvalConfig, _>(
            g,
            argv,
            name,
            |c| {
                if let Some(p) = protocol {
                    c.protocol = *p;
                }
                if let Some(a) = alignment {
                    c.alignment = *a;
                }
            },
            |c, out| commands::eval(c, required(model, "model")?, required(data, "data")?, out),
        ),
        Command::Stats { data } => dispatch::<StatsConfig, _>(
            g,
            argv,
            name,
            |_| {},
            |c, out| commands::stats(c, required(data, "data")?, out),
        ),
        Command::Ablate { data, protocol } => dispatch::<AblateConfig, _>(
            g,
            argv,
            name,
            |c| {
                if let Some(p) = protocol {
                    c.protocol = *p;
                }
            },
            |c, out| commands::ablate(c, required(data, "data")?, out),
        ),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
