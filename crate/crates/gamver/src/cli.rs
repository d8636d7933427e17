use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gamver_core::synth::Domain;
use gamver_core::verifier::{Averaging, Method};

use crate::config::Arch;

#[derive(Debug, Parser)]
#[command(name = "gamver", version, about = "Verify CNN suitability from attention and feature-response maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic grayscale dataset (PGM + labels.csv).
    Synthgen(SynthgenArgs),
    /// Train a network on a labeled dataset directory.
    Train(TrainArgs),
    /// Build a reference bundle (average GAMs and feature responses) from a trusted model.
    BuildRef(BuildRefArgs),
    /// Extract similarity records of a candidate model against a reference bundle.
    Extract(ExtractArgs),
    /// Fit the random-forest verifier on aligned and misaligned records with cross-validation.
    FitVerify(FitVerifyArgs),
    /// Accept or reject a candidate model on a set of images.
    Verify(VerifyArgs),
    /// Feature-map rotation probe: discriminate original from rotated images.
    Fmverify(FmverifyArgs),
    /// Train a k+1-class network with a garbage class and evaluate it.
    Garbage(GarbageArgs),
    /// Per-label statistics of one or more records files.
    Report(ReportArgs),
    /// Export a Grad-CAM overlay PNG for one image.
    Overlay(OverlayArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
}

#[derive(Debug, Args)]
pub struct ForestFlags {
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub features_per_split: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthgenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub domain: Option<Domain>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Labeled dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct BuildRefArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model directory of the trusted reference model.
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled dataset from the reference model's own domain.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub working_size: Option<usize>,
    #[arg(long, value_enum)]
    pub averaging: Option<AveragingArg>,
    /// Average every sample, not only correctly classified ones.
    #[arg(long)]
    pub all_samples: bool,
    /// Comma-separated 1-based conv layers to store feature responses for.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum AveragingArg {
    PerClass,
    Global,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::PerClass => Averaging::PerClass,
            AveragingArg::Global => Averaging::Global,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    /// Candidate model directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Reference bundle directory.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Image directory or single image.
    #[arg(long)]
    pub data: PathBuf,
    /// gradcam, featuremap-L1 or featuremap-L2.
    #[arg(long)]
    pub method: Option<Method>,
    /// Label written to every record (1 aligned, 0 misaligned).
    #[arg(long)]
    pub label: Option<u8>,
    /// Prepended to every sample id.
    #[arg(long, default_value = "")]
    pub id_prefix: String,
}

#[derive(Debug, Args)]
pub struct FitVerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Records CSV files of aligned candidates (labeled 1).
    #[arg(long, required = true, num_args = 1..)]
    pub aligned: Vec<PathBuf>,
    /// Records CSV files of misaligned candidates (labeled 0).
    #[arg(long, required = true, num_args = 1..)]
    pub misaligned: Vec<PathBuf>,
    #[command(flatten)]
    pub forest: ForestFlags,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Candidate model directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Image directory or single image.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    /// Reference bundle (not used by the garbage method).
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Fitted forest JSON (not used by the garbage method).
    #[arg(long)]
    pub verifier: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Fraction of accepted images needed to accept the model.
    #[arg(long)]
    pub quorum: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FmverifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Reference model directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Images to rotate (labels, if any, are ignored).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub angle: Option<f64>,
    /// featuremap-L1 or featuremap-L2.
    #[arg(long)]
    pub method: Option<Method>,
    #[command(flatten)]
    pub forest: ForestFlags,
}

#[derive(Debug, Args)]
pub struct GarbageArgs {
    #[command(flatten)]
    pub common: Common,
    /// Labeled in-domain dataset with k classes.
    #[arg(long)]
    pub data: PathBuf,
    /// Garbage images (any labels are ignored); they become class k.
    #[arg(long)]
    pub garbage: PathBuf,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Also train a k-class model for the non-degradation comparison.
    #[arg(long)]
    pub baseline: bool,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Target class; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub working_size: Option<usize>,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Synthgen(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::BuildRef(a) => &a.common,
            Command::Extract(a) => &a.common,
            Command::FitVerify(a) => &a.common,
            Command::Verify(a) => &a.common,
            Command::Fmverify(a) => &a.common,
            Command::Garbage(a) => &a.common,
            Command::Report(a) => &a.common,
            Command::Overlay(a) => &a.common,
        }
    }
}
