//! Noise-prediction training of the toy model with AdamW.
//!
//! Each iteration draws a batch of pair indices, builds one graph per sample
//! (in parallel when enabled), and sums the per-sample parameter gradients in
//! batch order, so the trajectory does not depend on the execution mode.

use super::codec::LatentCodec;
use super::config::{join, pair, parse_list, parse_value, Pairs};
use super::dataset::ToyPair;
use super::loss::{total_loss, total_loss_graph, LossWeights};
use super::model::{InitMode, ModelConfig, ToyModel};
use crate::autodiff::{AdamWConfig, GradBuffer, Graph, OptimizerState};
use crate::diffusion::{q_sample, NoiseSchedule, SamplerKind, ScheduleKind};
use crate::error::{Error, Result};
use crate::exec::{map_indices, ExecMode};
use crate::rng::{gaussian_sample, Rng};
use crate::tensor::Tensor;
use crate::tpr::EncoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conditioning {
    #[default]
    Events,
    None,
}

impl std::str::FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "events" => Ok(Conditioning::Events),
            "none" => Ok(Conditioning::None),
            _ => Err(Error::domain(format!("unknown conditioning {s:?} (events|none)"))),
        }
    }
}

impl std::fmt::Display for Conditioning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Conditioning::Events => "events",
            Conditioning::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub loss: LossWeights,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub conditioning: Conditioning,
    pub codec: LatentCodec,
    pub widths: [usize; 3],
    pub time_dim: usize,
    pub attn_dim: usize,
    pub decoder_attention: bool,
    pub encoder_hidden: [usize; 2],
    pub encoder_out: usize,
    /// Diffusion length `T` of the linear schedule.
    pub schedule_steps: usize,
    /// Draw a monitoring sample every this many iterations (0 disables).
    pub monitor_every: usize,
    pub monitor_pairs: usize,
    pub monitor_steps: usize,
    /// Add the image-space loss on the one-step `x0` estimate to the
    /// noise-prediction loss.
    pub finetune_x0: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            weight_decay: 0.01,
            loss: LossWeights::default(),
            batch_size: 8,
            iterations: 500,
            seed: 0,
            conditioning: Conditioning::Events,
            codec: LatentCodec::Identity,
            widths: [16, 32, 32],
            time_dim: 16,
            attn_dim: 16,
            decoder_attention: false,
            encoder_hidden: [16, 32],
            encoder_out: 32,
            schedule_steps: 1000,
            monitor_every: 0,
            monitor_pairs: 4,
            monitor_steps: 15,
            finetune_x0: false,
        }
    }
}

impl TrainConfig {
    pub fn to_pairs(&self) -> Pairs {
        vec![
            pair("lr", self.lr),
            pair("weight_decay", self.weight_decay),
            pair("lambda_pix", self.loss.pix),
            pair("lambda_perc", self.loss.perc),
            pair("batch_size", self.batch_size),
            pair("iterations", self.iterations),
            pair("seed", self.seed),
            pair("conditioning", self.conditioning),
            pair("codec", self.codec),
            pair("widths", join(&self.widths)),
            pair("time_dim", self.time_dim),
            pair("attn_dim", self.attn_dim),
            pair("decoder_attention", self.decoder_attention),
            pair("encoder_hidden", join(&self.encoder_hidden)),
            pair("encoder_out", self.encoder_out),
            pair("schedule_steps", self.schedule_steps),
            pair("monitor_every", self.monitor_every),
            pair("monitor_pairs", self.monitor_pairs),
            pair("monitor_steps", self.monitor_steps),
            pair("finetune_x0", self.finetune_x0),
        ]
    }

    /// Apply `key=value` overrides; unknown keys are errors.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            match k.as_str() {
                "lr" => self.lr = parse_value(k, v)?,
                "weight_decay" => self.weight_decay = parse_value(k, v)?,
                "lambda_pix" => self.loss.pix = parse_value(k, v)?,
                "lambda_perc" => self.loss.perc = parse_value(k, v)?,
                "batch_size" => self.batch_size = parse_value(k, v)?,
                "iterations" => self.iterations = parse_value(k, v)?,
                "seed" => self.seed = parse_value(k, v)?,
                "conditioning" => self.conditioning = v.parse()?,
                "codec" => self.codec = v.parse()?,
                "widths" => {
                    let w: Vec<usize> = parse_list(k, v)?;
                    self.widths = w.try_into().map_err(|_| Error::domain("widths needs three values"))?;
                }
                "time_dim" => self.time_dim = parse_value(k, v)?,
                "attn_dim" => self.attn_dim = parse_value(k, v)?,
                "decoder_attention" => self.decoder_attention = parse_value(k, v)?,
                "encoder_hidden" => {
                    let w: Vec<usize> = parse_list(k, v)?;
                    self.encoder_hidden = w
                        .try_into()
                        .map_err(|_| Error::domain("encoder_hidden needs two values"))?;
                }
                "encoder_out" => self.encoder_out = parse_value(k, v)?,
                "schedule_steps" => self.schedule_steps = parse_value(k, v)?,
                "monitor_every" => self.monitor_every = parse_value(k, v)?,
                "monitor_pairs" => self.monitor_pairs = parse_value(k, v)?,
                "monitor_steps" => self.monitor_steps = parse_value(k, v)?,
                "finetune_x0" => self.finetune_x0 = parse_value(k, v)?,
                _ => return Err(Error::domain(format!("unknown training key {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::domain("lr and weight_decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be positive"));
        }
        if self.monitor_every > 0 && (self.monitor_steps == 0 || self.monitor_steps > self.schedule_steps) {
            return Err(Error::domain("monitor_steps must be in 1..=schedule_steps"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule_steps, ScheduleKind::Linear, 1e-4, 0.02)
    }

    pub fn model_config(&self, pyramid_channels: usize, latent_channels: usize) -> ModelConfig {
        ModelConfig {
            latent_channels,
            widths: self.widths,
            time_dim: self.time_dim,
            attn_dim: self.attn_dim,
            events: self.conditioning == Conditioning::Events,
            decoder_attention: self.decoder_attention,
            encoder: EncoderConfig {
                in_channels: pyramid_channels,
                hidden: self.encoder_hidden,
                out_channels: self.encoder_out,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    /// 1-based.
    pub iteration: usize,
    pub eps_loss: f64,
    /// Image-space loss of the one-step estimate (fine-tune mode only).
    pub x0_loss: Option<f64>,
    /// Mean image-space loss of full samples on the monitoring pairs.
    pub monitor_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub seed: u64,
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut s = String::from("iteration,eps_loss,x0_loss,monitor_loss\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration,
                r.eps_loss,
                opt(r.x0_loss),
                opt(r.monitor_loss)
            ));
        }
        s
    }

    /// Mean noise-prediction loss over iterations `[from, to)` (0-based).
    pub fn mean_eps_loss(&self, from: usize, to: usize) -> f64 {
        let slice = &self.records[from.min(self.records.len())..to.min(self.records.len())];
        slice.iter().map(|r| r.eps_loss).sum::<f64>() / slice.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub log: TrainLog,
}

struct Prepared {
    x0: Tensor,
    x_hz: Tensor,
}

const SAMPLE_STREAM_SALT: u64 = 0x7a11_5eed;

/// One sample's loss values and parameter gradients.
fn sample_step(
    model: &ToyModel,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    data: &ToyPair,
    prep: &Prepared,
    rng: &mut Rng,
) -> Result<(f64, Option<f64>, GradBuffer)> {
    let t = 1 + rng.below(sched.steps());
    let eps = gaussian_sample(rng, prep.x0.dims())?;
    let x_t = q_sample(&prep.x0, t, &eps, sched)?;
    let mut g = Graph::new();
    let xt = g.leaf_f32(x_t.dims(), x_t.data())?;
    let hz = g.leaf_f32(prep.x_hz.dims(), prep.x_hz.data())?;
    let tpr = if model.config.events {
        Some(g.leaf_f32(data.tpr.grid.dims(), data.tpr.grid.data())?)
    } else {
        None
    };
    let pred = model.predict_graph(&mut g, xt, hz, t, tpr)?;
    let target = g.leaf_f32(eps.dims(), eps.data())?;
    let eps_loss = g.mse(pred, target)?;
    let (loss, x0_loss) = if cfg.finetune_x0 {
        let ab = sched.alpha_bar(t);
        let scaled = g.scale(pred, -(1.0 - ab).sqrt());
        let num = g.add(xt, scaled)?;
        let x0_hat = g.scale(num, 1.0 / ab.sqrt());
        let img = model.codec.decode_graph(&mut g, x0_hat)?;
        let clean = data.clean.to_tensor();
        let clean = g.leaf_f32(clean.dims(), clean.data())?;
        let (_, _, total) = total_loss_graph(&mut g, img, clean, cfg.loss)?;
        (g.add(eps_loss, total)?, Some(total))
    } else {
        (eps_loss, None)
    };
    let grads = g.backward(loss)?;
    Ok((
        g.scalar(eps_loss),
        x0_loss.map(|v| g.scalar(v)),
        GradBuffer::from_graph(&model.store, &g, &grads),
    ))
}

/// Mean image-space loss of DDIM samples on the first `cfg.monitor_pairs`
/// pairs.
fn monitor(
    model: &ToyModel,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    pairs: &[ToyPair],
    iteration: usize,
    mode: ExecMode,
) -> Result<f64> {
    let n = cfg.monitor_pairs.min(pairs.len()).max(1);
    let sampler = SamplerKind::Ddim {
        steps: cfg.monitor_steps,
        eta: 0.0,
    };
    let losses = map_indices(n, mode, |i| {
        let mut rng = Rng::stream(cfg.seed ^ iteration as u64, i as u64);
        let p = &pairs[i];
        let out = model.dehaze(&p.hazy, Some(&p.tpr), sampler, InitMode::Scheduled, sched, &mut rng)?;
        Ok(total_loss(&out, &p.clean, cfg.loss)?.total)
    });
    let losses = losses.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / n as f64)
}

pub fn train_toy(cfg: &TrainConfig, pairs: &[ToyPair], mode: ExecMode) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::domain("training needs at least one pair"))?;
    let sched = cfg.schedule()?;
    let prepared = pairs
        .iter()
        .map(|p| {
            Ok(Prepared {
                x0: cfg.codec.encode(&p.clean)?,
                x_hz: cfg.codec.encode(&p.hazy)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model_cfg = cfg.model_config(first.tpr.grid.dims()[0], first.clean.channels());
    let mut model = ToyModel::new(model_cfg, cfg.codec, &mut Rng::stream(cfg.seed, 0))?;
    let mut opt = OptimizerState::new(
        &model.store,
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let mut batch_rng = Rng::stream(cfg.seed, 1);
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| batch_rng.below(pairs.len())).collect();
        let model_ref = &model;
        let results = map_indices(cfg.batch_size, mode, |b| {
            let mut rng = Rng::stream(cfg.seed ^ SAMPLE_STREAM_SALT, (it * cfg.batch_size + b) as u64);
            let i = picks[b];
            sample_step(model_ref, cfg, &sched, &pairs[i], &prepared[i], &mut rng)
        });
        let mut grads = GradBuffer::zeros(&model.store);
        let (mut eps_sum, mut x0_sum) = (0.0, 0.0);
        for r in results {
            let (e, x0, g) = r?;
            eps_sum += e;
            x0_sum += x0.unwrap_or(0.0);
            grads.add_assign(&g);
        }
        let scale = 1.0 / cfg.batch_size as f64;
        let eps_loss = eps_sum * scale;
        let x0_loss = cfg.finetune_x0.then_some(x0_sum * scale);
        if !eps_loss.is_finite() || !x0_loss.unwrap_or(0.0).is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it + 1 });
        }
        grads.scale(scale);
        model.store.set_grads(&grads)?;
        opt.step(&mut model.store)?;
        let monitor_loss = if cfg.monitor_every > 0 && (it + 1) % cfg.monitor_every == 0 {
            Some(monitor(&model, cfg, &sched, pairs, it + 1, mode)?)
        } else {
            None
        };
        records.push(LogRecord {
            iteration: it + 1,
            eps_loss,
            x0_loss,
            monitor_loss,
        });
    }
    Ok(TrainOutcome {
        model,
        log: TrainLog {
            seed: cfg.seed,
            records,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::dataset::{build_toy_dataset, DatasetConfig};

    fn data() -> Vec<ToyPair> {
        let cfg = DatasetConfig {
            n: 4,
            size: 8,
            seed: 2,
            ..DatasetConfig::default()
        };
        build_toy_dataset(&cfg, ExecMode::Sequential).unwrap()
    }

    fn tiny(iterations: usize) -> TrainConfig {
        TrainConfig {
            widths: [4, 4, 4],
            time_dim: 4,
            attn_dim: 4,
            encoder_hidden: [4, 4],
            encoder_out: 4,
            batch_size: 2,
            iterations,
            lr: 1e-3,
            schedule_steps: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_initial_weights() {
        let pairs = data();
        let cfg = TrainConfig { lr: 0.0, ..tiny(3) };
        let out = train_toy(&cfg, &pairs, ExecMode::Sequential).unwrap();
        let init = ToyModel::new(out.model.config.clone(), cfg.codec, &mut Rng::stream(cfg.seed, 0)).unwrap();
        assert!(out
            .model
            .store
            .iter()
            .zip(init.store.iter())
            .all(|(a, b)| a.value == b.value));
    }

    #[test]
    fn runs_are_reproducible_across_modes() {
        let pairs = data();
        let a = train_toy(&tiny(3), &pairs, ExecMode::Parallel).unwrap();
        let b = train_toy(&tiny(3), &pairs, ExecMode::Sequential).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn finetune_and_monitor_modes_log() {
        let pairs = data();
        let cfg = TrainConfig {
            finetune_x0: true,
            monitor_every: 2,
            monitor_steps: 3,
            monitor_pairs: 1,
            codec: LatentCodec::AvgPool2,
            conditioning: Conditioning::None,
            ..tiny(2)
        };
        let pairs: Vec<ToyPair> = pairs
            .into_iter()
            .map(|p| ToyPair {
                clean: crate::image::Image::filled(16, 16, 3, 0.5).unwrap(),
                hazy: crate::image::Image::filled(16, 16, 3, 0.7).unwrap(),
                ..p
            })
            .collect();
        let out = train_toy(&cfg, &pairs, ExecMode::Sequential).unwrap();
        assert!(out.log.records.iter().all(|r| r.x0_loss.is_some()));
        assert!(out.log.records[1].monitor_loss.is_some());
        assert!(out.log.records[0].monitor_loss.is_none());
        assert!(out.log.to_csv().starts_with("iteration,eps_loss"));
    }

    #[test]
    fn diverging_run_reports_iteration() {
        let pairs = data();
        let cfg = TrainConfig {
            lr: 1e30,
            weight_decay: 0.0,
            ..tiny(20)
        };
        match train_toy(&cfg, &pairs, ExecMode::Sequential) {
            Err(Error::NonFiniteLoss { iteration }) => assert!(iteration >= 2),
            other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.log)),
        }
    }

    #[test]
    fn config_round_trip() {
        let mut c = TrainConfig::default();
        let mut modified = tiny(7);
        modified.conditioning = Conditioning::None;
        c.apply(&modified.to_pairs()).unwrap();
        assert_eq!(c, modified);
        assert!(c.apply(&[pair("bogus", 1)]).is_err());
        let neg = TrainConfig {
            loss: LossWeights { pix: 1.0, perc: -0.1 },
            ..TrainConfig::default()
        };
        assert!(neg.validate().is_err());
    }
}
