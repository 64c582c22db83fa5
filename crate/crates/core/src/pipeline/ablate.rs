//! Matched training runs that differ in one factor, each scored with several
//! samplers on a held-out split.

use std::time::Instant;

use super::dataset::ToyPair;
use super::evaluate::{evaluate, mean, EvalConfig};
use super::model::InitMode;
use super::train::{train_toy, Conditioning, TrainConfig, TrainLog};
use crate::diffusion::SamplerKind;
use crate::error::{Error, Result};
use crate::exec::ExecMode;

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub variants: Vec<Variant>,
    pub samplers: Vec<SamplerKind>,
    /// Every variant is trained once per seed (the seed overrides
    /// `train.seed`).
    pub seeds: Vec<u64>,
    pub init: InitMode,
}

impl AblationGrid {
    /// Events on/off, each sampled with DDPM-5, DDPM-15 and DDIM-15.
    pub fn standard(base: &TrainConfig, seeds: Vec<u64>) -> Self {
        let variant = |label: &str, conditioning| Variant {
            label: label.into(),
            train: TrainConfig {
                conditioning,
                ..base.clone()
            },
        };
        Self {
            variants: vec![
                variant("events-on", Conditioning::Events),
                variant("events-off", Conditioning::None),
            ],
            samplers: vec![
                SamplerKind::Ddpm { steps: 5 },
                SamplerKind::Ddpm { steps: 15 },
                SamplerKind::Ddim { steps: 15, eta: 0.0 },
            ],
            seeds,
            init: InitMode::Scheduled,
        }
    }

    /// Variants may differ only in their conditioning; labels must be
    /// unique; there must be something to run.
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.samplers.is_empty() || self.seeds.is_empty() {
            return Err(Error::domain("ablation grid needs variants, samplers and seeds"));
        }
        let normalized = |v: &Variant| TrainConfig {
            conditioning: Conditioning::Events,
            seed: 0,
            ..v.train.clone()
        };
        let reference = normalized(&self.variants[0]);
        for (i, v) in self.variants.iter().enumerate() {
            if normalized(v) != reference {
                let diff: Vec<String> = v
                    .train
                    .to_pairs()
                    .into_iter()
                    .zip(self.variants[0].train.to_pairs())
                    .filter(|(a, b)| a != b && a.0 != "seed")
                    .map(|(a, _)| a.0)
                    .collect();
                return Err(Error::domain(format!(
                    "variant {:?} differs from {:?} in {diff:?}; only one factor may vary",
                    v.label, self.variants[0].label
                )));
            }
            if self.variants[..i].iter().any(|o| o.label == v.label) {
                return Err(Error::domain(format!("duplicate variant label {:?}", v.label)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub sampler: String,
    /// `None` for the across-seed mean rows.
    pub seed: Option<u64>,
    pub psnr_db: f64,
    pub ssim: f64,
    pub spread_fraction: f64,
    pub wall_seconds: f64,
}

impl AblationRow {
    pub fn config_label(&self) -> String {
        match self.seed {
            Some(s) => format!("{}/{}/seed{s}", self.variant, self.sampler),
            None => format!("{}/{}/mean", self.variant, self.sampler),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Training log of every (variant, seed) run.
    pub logs: Vec<(String, u64, TrainLog)>,
}

impl AblationTable {
    pub const CSV_HEADER: &'static str = "config,psnr_db,ssim,wall_seconds";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.3}\n",
                r.config_label(),
                r.psnr_db,
                r.ssim,
                r.wall_seconds
            ));
        }
        s
    }

    pub fn mean_row(&self, variant: &str, sampler: &str) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.seed.is_none() && r.variant == variant && r.sampler == sampler)
    }
}

/// Train every variant for every seed on `train`, then score each trained
/// model with every sampler on `held_out`. Per-seed rows are followed by one
/// mean row per (variant, sampler).
pub fn ablate(grid: &AblationGrid, train: &[ToyPair], held_out: &[ToyPair], mode: ExecMode) -> Result<AblationTable> {
    grid.validate()?;
    let mut per_seed = Vec::new();
    let mut logs = Vec::new();
    for &seed in &grid.seeds {
        for v in &grid.variants {
            let cfg = TrainConfig {
                seed,
                ..v.train.clone()
            };
            let sched = cfg.schedule()?;
            let start = Instant::now();
            let outcome = train_toy(&cfg, train, mode)?;
            let train_secs = start.elapsed().as_secs_f64();
            for &sampler in &grid.samplers {
                let start = Instant::now();
                let eval = EvalConfig {
                    sampler,
                    init: grid.init,
                    seed,
                };
                let report = evaluate(&outcome.model, held_out, &eval, &sched, mode)?;
                per_seed.push(AblationRow {
                    variant: v.label.clone(),
                    sampler: sampler.label(),
                    seed: Some(seed),
                    psnr_db: report.mean_psnr(),
                    ssim: report.mean_ssim(),
                    spread_fraction: report.spread_fraction(),
                    wall_seconds: train_secs + start.elapsed().as_secs_f64(),
                });
            }
            logs.push((v.label.clone(), seed, outcome.log));
        }
    }
    let mut rows = per_seed.clone();
    for v in &grid.variants {
        for s in &grid.samplers {
            let label = s.label();
            let group: Vec<&AblationRow> = per_seed
                .iter()
                .filter(|r| r.variant == v.label && r.sampler == label)
                .collect();
            rows.push(AblationRow {
                variant: v.label.clone(),
                sampler: label,
                seed: None,
                psnr_db: mean(group.iter().map(|r| r.psnr_db)),
                ssim: mean(group.iter().map(|r| r.ssim)),
                spread_fraction: mean(group.iter().map(|r| r.spread_fraction)),
                wall_seconds: mean(group.iter().map(|r| r.wall_seconds)),
            });
        }
    }
    Ok(AblationTable { rows, logs })
}
