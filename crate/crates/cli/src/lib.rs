//! The `meltpool` command line.
//!
//! Every subcommand reads its inputs, validates flags and the optional
//! config file before doing any work, and writes plain files: PNG masks,
//! JSON-lines manifests, checkpoints and fixed-precision CSVs.

mod annotate;
mod config;
mod data;
mod measure;
mod model;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::FileConfig;

/// Exit status for bad flags or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failures while running.
pub const EXIT_FAILURE: i32 = 1;

/// Caps the worker threads used for batch work.
pub const THREADS_ENV: &str = "MELT_METRICS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "meltpool", version, about = "Melt-pool segmentation and measurement", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow the seven contour candidates from a seed ellipse.
    Candidates(annotate::CandidatesArgs),
    /// Brush-and-tolerance selection from a stroke file.
    Wand(annotate::WandArgs),
    /// Start the annotation service on 127.0.0.1.
    Annotate(annotate::AnnotateArgs),
    /// Expand the training split with augmented copies.
    Augment(data::AugmentArgs),
    /// Train a U-Net on a manifest's train and val splits.
    Train(model::TrainArgs),
    /// Train one network per batch size and learning rate.
    Grid(model::GridArgs),
    /// Score a checkpoint on one manifest split.
    Eval(model::EvalArgs),
    /// Write predicted masks for a set of images.
    Predict(model::PredictArgs),
    /// Measure melt pools from masks, or from images with a checkpoint.
    Measure(measure::MeasureArgs),
    /// Generate synthetic melt-pool images, masks and their true metrics.
    Synth(data::SynthArgs),
}

/// Flags shared by every subcommand that accepts a config file.
#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArg {
    /// TOML file overriding built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    pub fn load(&self) -> anyhow::Result<FileConfig> {
        match &self.config {
            Some(p) => FileConfig::load(p).map_err(usage),
            None => Ok(FileConfig::default()),
        }
    }
}

/// Marks an error as a usage problem so it exits with [`EXIT_USAGE`].
#[derive(Debug)]
pub struct UsageError(pub anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.into()))
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool may already exist when run() is called twice in one process.
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("keeping existing thread pool: {e}");
    }
    Ok(())
}

/// The error chain joined by `: `, skipping causes already spelled out by
/// the message before them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if last.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
        last = msg;
    }
    out
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Candidates(_) => "candidates",
            Command::Wand(_) => "wand",
            Command::Annotate(_) => "annotate",
            Command::Augment(_) => "augment",
            Command::Train(_) => "train",
            Command::Grid(_) => "grid",
            Command::Eval(_) => "eval",
            Command::Predict(_) => "predict",
            Command::Measure(_) => "measure",
            Command::Synth(_) => "synth",
        }
    }

    pub fn execute(self) -> anyhow::Result<()> {
        match self {
            Command::Candidates(a) => annotate::candidates(a),
            Command::Wand(a) => annotate::wand(a),
            Command::Annotate(a) => annotate::annotate(a),
            Command::Augment(a) => data::augment(a),
            Command::Train(a) => model::train(a),
            Command::Grid(a) => model::grid(a),
            Command::Eval(a) => model::eval(a),
            Command::Predict(a) => model::predict(a),
            Command::Measure(a) => measure::measure(a),
            Command::Synth(a) => data::synth(a),
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let name = cli.command.name();
    let result = init_threads().and_then(|_| cli.command.execute());
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("meltpool {name}: {}", describe(&e));
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}
