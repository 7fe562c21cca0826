//! `fst`: data generation, training, evaluation, inference, gate export and
//! ablations for the fusion segment transformer.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fst_core::data::Split;
use fst_core::FstError;

#[derive(Parser, Debug)]
#[command(
    name = "fst",
    version,
    about = "Full-track AI-generated music detection from segment embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled dataset with a manifest.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus history files.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one manifest split.
    Eval(EvalArgs),
    /// Classify a single embedding file.
    Infer(InferArgs),
    /// Write per-segment mean fusion gates as CSV.
    ExportGates(ExportGatesArgs),
    /// Train and evaluate several variants under one seed.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Tracks per class.
    #[arg(long, default_value_t = 300)]
    pub tracks: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub min_segments: usize,
    #[arg(long, default_value_t = 70)]
    pub max_segments: usize,
    #[arg(long, default_value_t = 3)]
    pub n_sections: usize,
    /// Section letters repeated cyclically, `A` for the first prototype.
    #[arg(long, default_value = "AABACA")]
    pub form: String,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    pub drift_sigma: f64,
    /// Also write frame-level files and downbeat annotations under `raw/`.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, default_value_t = 2.0)]
    pub frame_rate: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Flat JSON config; defaults to the tiny preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config value.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fusion_mode: Option<fst_core::FusionMode>,
    /// Prefix for `.history.csv` and `.history.json`; defaults to `--out`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SegmentationArg {
    Fourbar,
    Fixed,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Downbeat timestamps for four-bar segmentation of frame-level input.
    #[arg(long)]
    pub downbeats: Option<PathBuf>,
    /// The input holds frame-level embeddings to segment and pool.
    #[arg(long)]
    pub from_raw: bool,
    #[arg(long, value_enum)]
    pub segmentation: Option<SegmentationArg>,
    #[arg(long, default_value_t = 2.0)]
    pub frame_rate: f64,
    #[arg(long, default_value_t = 10.0)]
    pub window: f64,
    #[arg(long, default_value_t = 2.5)]
    pub hop: f64,
}

#[derive(Args, Debug)]
pub struct ExportGatesArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "gated,concat,xattn_only")]
    pub modes: Vec<fst_core::FusionMode>,
    /// Re-segment frame-level data from `raw/` with each listed strategy.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub segmentation: Vec<SegmentationArg>,
    /// Defaults to `raw/` next to the manifest.
    #[arg(long)]
    pub raw_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub frame_rate: f64,
    #[arg(long, default_value_t = 10.0)]
    pub window: f64,
    #[arg(long, default_value_t = 2.5)]
    pub hop: f64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Also write the comparison JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

fn exit_code(err: &FstError) -> u8 {
    match err {
        FstError::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::ExportGates(a) => commands::export_gates(&a),
        Command::Ablate(a) => commands::ablate(&a),
    };
    match result {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
