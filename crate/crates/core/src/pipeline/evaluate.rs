use super::dataset::ToyPair;
use super::metrics::{psnr, ssim};
use super::model::{InitMode, ToyModel};
use crate::diffusion::{NoiseSchedule, SamplerKind};
use crate::error::Result;
use crate::exec::{map_indices, ExecMode};
use crate::haze::intensity_histogram;
use crate::image::Image;
use crate::rng::Rng;

pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub sampler: SamplerKind,
    pub init: InitMode,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScore {
    pub psnr_db: f64,
    pub ssim: f64,
    pub hazy_spread: f32,
    pub output_spread: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<ImageScore>,
    pub outputs: Vec<Image>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.psnr_db))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.ssim))
    }

    /// Fraction of images whose output intensity spread is at least the
    /// hazy input's.
    pub fn spread_fraction(&self) -> f64 {
        mean(
            self.scores
                .iter()
                .map(|s| f64::from(u8::from(s.output_spread >= s.hazy_spread))),
        )
    }
}

pub(crate) fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Dehaze every pair and score it against its clean image. Image `i` draws
/// its noise from `Rng::stream(cfg.seed, i)`.
pub fn evaluate(
    model: &ToyModel,
    pairs: &[ToyPair],
    cfg: &EvalConfig,
    sched: &NoiseSchedule,
    mode: ExecMode,
) -> Result<EvalReport> {
    let results = map_indices(pairs.len(), mode, |i| {
        let p = &pairs[i];
        let mut rng = Rng::stream(cfg.seed, i as u64);
        let tpr = model.config.events.then_some(&p.tpr);
        let out = model.dehaze(&p.hazy, tpr, cfg.sampler, cfg.init, sched, &mut rng)?;
        let score = ImageScore {
            psnr_db: psnr(&out, &p.clean)?,
            ssim: ssim(&out, &p.clean)?,
            hazy_spread: intensity_histogram(&p.hazy, HISTOGRAM_BINS)?.spread,
            output_spread: intensity_histogram(&out, HISTOGRAM_BINS)?.spread,
        };
        Ok((score, out))
    });
    let mut report = EvalReport {
        scores: Vec::with_capacity(pairs.len()),
        outputs: Vec::with_capacity(pairs.len()),
    };
    for r in results {
        let (s, o) = r?;
        report.scores.push(s);
        report.outputs.push(o);
    }
    Ok(report)
}
