//! Toy end-to-end system: stand-in latent codec, procedural dataset,
//! event-conditioned denoiser, training, metrics and the ablation harness.

mod ablate;
mod codec;
pub mod config;
mod dataset;
mod evaluate;
mod loss;
mod metrics;
mod model;
mod train;
mod visualize;

pub use ablate::{ablate, AblationGrid, AblationRow, AblationTable, Variant};
pub use codec::LatentCodec;
pub use dataset::{build_toy_dataset, load_dataset, save_dataset, DatasetConfig, ToyPair, DATASET_FILE};
pub use evaluate::{evaluate, EvalConfig, EvalReport, ImageScore, HISTOGRAM_BINS};
pub use loss::{total_loss, total_loss_graph, LossBreakdown, LossWeights, PerceptualProxy, PERCEPTUAL_SEED};
pub use metrics::{psnr, ssim, PSNR_CAP_DB, SSIM_C1, SSIM_C2, SSIM_WINDOW};
pub use model::{initial_latent, timestep_embedding, Conditioned, InitMode, ModelConfig, ToyDenoiser, ToyModel};
pub use train::{train_toy, Conditioning, LogRecord, TrainConfig, TrainLog, TrainOutcome};
pub use visualize::{heat_colormap, visualize_feature};
