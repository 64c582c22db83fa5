use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eventdehaze::pipeline::{DatasetConfig, InitMode, TrainConfig};

use crate::kvflags::KvFlags;

#[derive(Debug, Parser)]
#[command(
    name = "eventdehaze",
    version,
    about = "Event-guided diffusion dehazing toolkit",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Directory for outputs and the run manifest; relative output paths are
    /// resolved against it.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Render an image along a motion trajectory and emit contrast events.
    SimulateEvents(SimulateEvents),
    /// Apply the scattering model to a clean image.
    MakeHaze(MakeHaze),
    /// Luminance histogram as CSV; spread and dynamic range on stderr.
    Histogram(HistogramArgs),
    /// Voxelize an event window into a temporal pyramid tensor.
    BuildTpr(BuildTpr),
    /// Generate the procedural clean/hazy/events dataset.
    MakeDataset(MakeDataset),
    /// Train the toy conditional denoiser.
    TrainToy(TrainToy),
    /// Dehaze one image with a trained checkpoint.
    Sample(Sample),
    /// Score a checkpoint on dataset pairs.
    Evaluate(Evaluate),
    /// Events on/off ablation across samplers and seeds.
    Ablate(Ablate),
    /// Heatmap of the event feature a checkpoint extracts from a pyramid.
    VisualizeXe(VisualizeXe),
}

impl Verb {
    pub fn name(&self) -> &'static str {
        match self {
            Verb::SimulateEvents(_) => "simulate-events",
            Verb::MakeHaze(_) => "make-haze",
            Verb::Histogram(_) => "histogram",
            Verb::BuildTpr(_) => "build-tpr",
            Verb::MakeDataset(_) => "make-dataset",
            Verb::TrainToy(_) => "train-toy",
            Verb::Sample(_) => "sample",
            Verb::Evaluate(_) => "evaluate",
            Verb::Ablate(_) => "ablate",
            Verb::VisualizeXe(_) => "visualize-xe",
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateEvents {
    /// Scene image (.pgm or .ppm; color is converted to luminance).
    #[arg(long)]
    pub image: PathBuf,
    /// Trajectory CSV, lines `t_us,dx,dy,rot,scale`.
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub cpos: f64,
    #[arg(long, default_value_t = 0.2)]
    pub cneg: f64,
    /// Per-pixel dead time, microseconds.
    #[arg(long, default_value_t = 0)]
    pub refractory: u64,
    /// Rendered steps per trajectory segment (0 or 1 renders the samples only).
    #[arg(long, default_value_t = 30)]
    pub substeps: usize,
    /// Output stream; `.csv` or `.bin`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("tmap").required(true).args(["depth", "transmission"]))]
pub struct MakeHaze {
    #[arg(long)]
    pub clean: PathBuf,
    /// Depth map tensor `[H, W]`; transmission is `exp(-beta * depth)`.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Constant transmission instead of a depth map.
    #[arg(long)]
    pub transmission: Option<f32>,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f32,
    #[arg(long, default_value_t = 0.9)]
    pub airlight: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
    #[arg(long, default_value = "hist.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnchorArg {
    End,
    Start,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolarityArg {
    Signed,
    Split,
}

#[derive(Debug, Args)]
pub struct BuildTpr {
    /// Event stream, `.bin` or `.csv`.
    #[arg(long)]
    pub events: PathBuf,
    /// Sensor width; required for CSV input.
    #[arg(long)]
    pub width: Option<u16>,
    /// Sensor height; required for CSV input.
    #[arg(long)]
    pub height: Option<u16>,
    #[arg(long)]
    pub t0: u64,
    #[arg(long)]
    pub t1: u64,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 2)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = AnchorArg::End)]
    pub anchor: AnchorArg,
    #[arg(long, value_enum, default_value_t = PolarityArg::Signed)]
    pub polarity: PolarityArg,
    /// Divide by the number of events in the window.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeDataset {
    /// `key=value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub set: KvFlags<DatasetConfig>,
    /// Output directory.
    #[arg(long, default_value = "dataset")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainToy {
    /// Directory written by `make-dataset`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Train on the first N pairs only.
    #[arg(long)]
    pub train_count: Option<usize>,
    /// `key=value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub set: KvFlags<TrainConfig>,
    /// Checkpoint output directory.
    #[arg(long, default_value = "checkpoint")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "train_log.csv")]
    pub log: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplerArg {
    Ddpm,
    Ddim,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long, value_enum, default_value_t = SamplerArg::Ddim)]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 15)]
    pub steps: usize,
    /// DDIM noise scale; 0 is deterministic.
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// Start of the reverse process: `scheduled` or `paper-literal`.
    #[arg(long, default_value_t = InitMode::Scheduled)]
    pub init: InitMode,
}

#[derive(Debug, Args)]
pub struct Sample {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Temporal pyramid tensor; required by event-conditioned checkpoints.
    #[arg(long)]
    pub cond_events: Option<PathBuf>,
    #[arg(long)]
    pub hazy: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Skip the first N pairs (e.g. the training split).
    #[arg(long, default_value_t = 0)]
    pub skip: usize,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value = "scores.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Ablate {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Pairs used for training; the rest are held out.
    #[arg(long, default_value_t = 64)]
    pub train_count: usize,
    /// Training seeds; defaults to `--seed` and the next two integers.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "ddpm-5,ddpm-15,ddim-15")]
    pub samplers: Vec<String>,
    #[arg(long, default_value_t = InitMode::Scheduled)]
    pub init: InitMode,
    /// `key=value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub set: KvFlags<TrainConfig>,
    #[arg(long, default_value = "ablation.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VisualizeXe {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Temporal pyramid tensor.
    #[arg(long)]
    pub tpr: PathBuf,
    #[arg(long, default_value = "xe.ppm")]
    pub out: PathBuf,
}
