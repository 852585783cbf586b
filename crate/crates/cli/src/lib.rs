//! Command-line surface of the narrator pipeline.
//!
//! Every command works on a JSONL manifest; per-sample artifacts live under
//! `artifacts/<id>/` next to it, and each run appends its configuration hash
//! and seed to `runs.jsonl`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use narrator::keyframe::KeyframeStrategy;
use serde::Serialize;

pub use commands::{execute, CliFailure, Summary};
pub use config::{BackendKind, PipelineConfig, S_BOX_CHOICES};

#[derive(Debug, Parser)]
#[command(name = "narrator", version, about = "Generate, narrate and score GUI action videos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn parse_s_box(text: &str) -> Result<u32, String> {
    text.parse::<u32>()
        .ok()
        .filter(|v| S_BOX_CHOICES.contains(v))
        .ok_or_else(|| format!("must be one of {S_BOX_CHOICES:?}"))
}

/// Flags shared by every command; each overrides the config file.
#[derive(Clone, Debug, Default, Args, Serialize)]
pub struct Common {
    /// Sample manifest (JSONL); artifacts are written next to it.
    #[arg(long)]
    pub manifest: PathBuf,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Samples processed in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Side of the visual prompt box and crop.
    #[arg(long, value_parser = parse_s_box)]
    pub s_box: Option<u32>,
    /// model, heuristic, start_end or ground_truth.
    #[arg(long)]
    pub keyframe_strategy: Option<KeyframeStrategy>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Write every caption query's images and text under artifacts/<id>/prompt/.
    #[arg(long)]
    pub dump_prompts: bool,
    /// Recompute artifacts that are already current.
    #[arg(long)]
    pub force: bool,
    /// Send only the full frames, without crops.
    #[arg(long)]
    pub no_crop: bool,
    /// Send frames without the prompt box.
    #[arg(long)]
    pub no_annotate: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic samples and write their manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Locate the cursor in every sampled frame.
    DetectCursor {
        #[command(flatten)]
        common: Common,
    },
    /// Choose start and end keyframes.
    Keyframes {
        #[command(flatten)]
        common: Common,
    },
    /// Build caption queries and send them to the backend.
    Caption {
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions and write the report.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Generate (if the manifest is absent), detect, choose keyframes, caption and evaluate.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the keyframe scoring head on the train split.
    TrainHead {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Count samples per split, action and source.
    Stats {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::DetectCursor { .. } => "detect-cursor",
            Command::Keyframes { .. } => "keyframes",
            Command::Caption { .. } => "caption",
            Command::Evaluate { .. } => "evaluate",
            Command::Pipeline { .. } => "pipeline",
            Command::TrainHead { .. } => "train-head",
            Command::Stats { .. } => "stats",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Generate { common, .. }
            | Command::DetectCursor { common }
            | Command::Keyframes { common }
            | Command::Caption { common }
            | Command::Evaluate { common }
            | Command::Pipeline { common, .. }
            | Command::TrainHead { common, .. }
            | Command::Stats { common } => common,
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<Summary, CliFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliFailure::new("args", e.to_string()))?;
    execute(&cli.command)
}
