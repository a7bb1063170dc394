use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "liftkit",
    version,
    about = "Feature upsampling toolkit: train, apply and evaluate LiFT"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a toy dataset: PPM images, toy-featurizer blobs at three scales and a manifest.
    GenToy(GenToyArgs),
    /// Train LiFT on a manifest with the multi-scale reconstruction objective.
    Train(TrainArgs),
    /// Upsample one feature blob.
    Upsample(UpsampleArgs),
    /// Keypoint correspondence (PCK) on annotated pairs.
    EvalPck(EvalPckArgs),
    /// CKA between features of the same images at several input scales.
    EvalCka(EvalCkaArgs),
    /// Single-object discovery (TokenCut) scored with CorLoc.
    EvalDiscovery(EvalDiscoveryArgs),
    /// Render the cosine self-similarity map of one blob as a PGM image.
    Simmap(SimmapArgs),
    /// Analytic cost of a ViT backbone, optionally with one LiFT pass.
    Flops(FlopsArgs),
    /// Cost/score sweep over methods and resolutions, as CSV.
    Tradeoff(TradeoffArgs),
}

#[derive(Debug, Args)]
pub struct GenToyArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 224)]
    pub res: usize,
    /// Scene, jitter and shift seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Seed of the frozen toy featurizer, shared across splits.
    #[arg(long, default_value_t = 0)]
    pub featurizer_seed: u64,
    /// Independent scenes only, no shifted pairs or keypoint files.
    #[arg(long)]
    pub no_pairs: bool,
    #[arg(long)]
    pub no_jitter: bool,
    /// Output directory.
    #[arg(long, default_value = "toy")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceArg {
    Cosine,
    L1,
    L2,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "toy/manifest.tsv")]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = DistanceArg::Cosine)]
    pub distance: DistanceArg,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Stop after exactly this many optimizer steps (overrides --epochs).
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Seeds both weight initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ablate the image branch.
    #[arg(long)]
    pub no_image: bool,
    /// Encoder channels, comma-separated (default: derived from the patch size).
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    /// Also write the per-step loss curve as CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value = "lift.lftw")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// No upsampling (evaluation only).
    Raw,
    Bilinear,
    /// Bilinear followed by an identity-initialized 3x3 convolution.
    Rc,
    /// Joint bilateral upsampling guided by the image.
    Jbu,
}

/// How features are upsampled before evaluation.
#[derive(Debug, Args)]
pub struct MethodOpts {
    /// Trained LiFT weights; takes precedence over --method.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Number of 2x applications.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct UpsampleArgs {
    #[command(flatten)]
    pub method: MethodOpts,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Guidance image (required by LiFT with an image branch and by JBU).
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalPckArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.01")]
    pub alphas: Vec<f64>,
    #[command(flatten)]
    pub method: MethodOpts,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalCkaArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "56,112,224,448")]
    pub scales: Vec<usize>,
    #[command(flatten)]
    pub method: MethodOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalDiscoveryArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    #[command(flatten)]
    pub method: MethodOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimmapArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `center` or `row,col`.
    #[arg(long, default_value = "center")]
    pub anchor: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long, default_value = "vit-s16")]
    pub arch: String,
    #[arg(long, default_value_t = 224)]
    pub res: usize,
    /// Patch-embedding stride (default: the patch size).
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub with_lift: bool,
}

#[derive(Debug, Args)]
pub struct TradeoffArgs {
    #[arg(long, default_value = "vit-s16")]
    pub arch: String,
    /// Any of raw, bilinear, rc, jbu, lift.
    #[arg(long, value_delimiter = ',', default_value = "raw,bilinear,lift")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "56,112,224")]
    pub resolutions: Vec<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Toy manifest to score each point with PCK; without it scores are NaN.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// LiFT weights used for the `lift` rows when scoring.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
