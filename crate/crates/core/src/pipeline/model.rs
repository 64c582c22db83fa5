//! The toy conditional denoiser and the model bundle used for training,
//! sampling and checkpointing.

use std::path::Path;

use super::codec::{to_tensor, LatentCodec};
use super::config::{join, pair, parse_list, parse_value, Pairs};
use crate::autodiff::nn::{Conv2d, CrossAttention, Linear};
use crate::autodiff::{load_checkpoint, save_checkpoint, Graph, ParamStore, Var};
use crate::diffusion::{Denoiser, NoiseSchedule, SamplerKind};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{gaussian_sample, Rng};
use crate::tensor::Tensor;
use crate::tpr::{EncoderConfig, EventEncoder, TemporalPyramid};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub latent_channels: usize,
    /// Channels of the three resolution levels, finest first.
    pub widths: [usize; 3],
    pub time_dim: usize,
    pub attn_dim: usize,
    pub events: bool,
    /// Also attend to events in the two coarsest decoder stages.
    pub decoder_attention: bool,
    pub encoder: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_channels: 3,
            widths: [16, 32, 32],
            time_dim: 16,
            attn_dim: 16,
            events: true,
            decoder_attention: false,
            encoder: EncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn to_pairs(&self) -> Pairs {
        vec![
            pair("model.latent_channels", self.latent_channels),
            pair("model.widths", join(&self.widths)),
            pair("model.time_dim", self.time_dim),
            pair("model.attn_dim", self.attn_dim),
            pair("model.events", self.events),
            pair("model.decoder_attention", self.decoder_attention),
            pair("model.encoder_in", self.encoder.in_channels),
            pair("model.encoder_hidden", join(&self.encoder.hidden)),
            pair("model.encoder_out", self.encoder.out_channels),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in pairs {
            match k.as_str() {
                "model.latent_channels" => c.latent_channels = parse_value(k, v)?,
                "model.widths" => c.widths = three(k, v)?,
                "model.time_dim" => c.time_dim = parse_value(k, v)?,
                "model.attn_dim" => c.attn_dim = parse_value(k, v)?,
                "model.events" => c.events = parse_value(k, v)?,
                "model.decoder_attention" => c.decoder_attention = parse_value(k, v)?,
                "model.encoder_in" => c.encoder.in_channels = parse_value(k, v)?,
                "model.encoder_hidden" => {
                    let h: Vec<usize> = parse_list(k, v)?;
                    c.encoder.hidden = h
                        .try_into()
                        .map_err(|_| Error::domain(format!("{k} needs two values")))?;
                }
                "model.encoder_out" => c.encoder.out_channels = parse_value(k, v)?,
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.latent_channels,
            self.time_dim,
            self.attn_dim,
            self.encoder.in_channels,
        ];
        if dims.contains(&0)
            || self.widths.contains(&0)
            || self.encoder.hidden.contains(&0)
            || self.encoder.out_channels == 0
        {
            return Err(Error::domain("model widths must be positive"));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::domain(format!("time_dim must be even, got {}", self.time_dim)));
        }
        Ok(())
    }
}

fn three(key: &str, v: &str) -> Result<[usize; 3]> {
    let list: Vec<usize> = parse_list(key, v)?;
    list.try_into()
        .map_err(|_| Error::domain(format!("{key} needs three values")))
}

/// `[sin(t w_0), .., sin(t w_{k-1}), cos(t w_0), ..]` with
/// `w_i = 10000^(-i/k)`, `k = dim / 2`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freq = |i: usize| (-(10000f64.ln()) * i as f64 / half as f64).exp();
    let mut out: Vec<f64> = (0..half).map(|i| (t as f64 * freq(i)).sin()).collect();
    out.extend((0..half).map(|i| (t as f64 * freq(i)).cos()));
    out
}

#[derive(Debug, Clone, PartialEq)]
struct AttentionBlock {
    attn: CrossAttention,
    proj: Conv2d,
}

impl AttentionBlock {
    fn new(store: &mut ParamStore, name: &str, c_feat: usize, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let d = cfg.attn_dim;
        Self {
            attn: CrossAttention::new(
                store,
                &format!("{name}.attn"),
                cfg.encoder.out_channels,
                c_feat,
                d,
                d,
                1,
                rng,
            ),
            proj: Conv2d::new(store, &format!("{name}.proj"), d, c_feat, 1, rng),
        }
    }

    /// `h + proj(attention(x_e, h))`
    fn forward(&self, g: &mut Graph, store: &ParamStore, h: Var, x_e: Var) -> Result<Var> {
        let a = self.attn.forward(g, store, x_e, h)?;
        let p = self.proj.forward(g, store, a)?;
        g.add(h, p)
    }
}

/// Three conv stages down (full, 1/2, 1/4 resolution), a bottleneck with
/// event cross-attention, three conv stages up with skip connections, and a
/// 3x3 output head. Input is `x_t` concatenated with `x_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub config: ModelConfig,
    down: [Conv2d; 3],
    mid: Conv2d,
    up: [Conv2d; 3],
    head: Conv2d,
    time: [Linear; 4],
    attn: Option<AttentionBlock>,
    decoder_attn: Vec<AttentionBlock>,
}

impl ToyDenoiser {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut Rng) -> Self {
        let [c1, c2, c3] = config.widths;
        let c = config.latent_channels;
        let conv = |store: &mut ParamStore, n: &str, i, o, rng: &mut Rng| Conv2d::new(store, n, i, o, 3, rng);
        let down = [
            conv(store, "den.down1", 2 * c, c1, rng),
            conv(store, "den.down2", c1, c2, rng),
            conv(store, "den.down3", c2, c3, rng),
        ];
        let mid = conv(store, "den.mid", c3, c3, rng);
        let up = [
            conv(store, "den.up3", 2 * c3, c2, rng),
            conv(store, "den.up2", 2 * c2, c1, rng),
            conv(store, "den.up1", 2 * c1, c1, rng),
        ];
        let head = conv(store, "den.head", c1, c, rng);
        let time = [c1, c2, c3, c3]
            .iter()
            .enumerate()
            .map(|(i, &w)| Linear::new(store, &format!("den.time{i}"), config.time_dim, w, true, rng))
            .collect::<Vec<_>>()
            .try_into()
            .expect("four stages");
        let attn = config
            .events
            .then(|| AttentionBlock::new(store, "den.mid_attn", c3, config, rng));
        let decoder_attn = if config.events && config.decoder_attention {
            vec![
                AttentionBlock::new(store, "den.up3_attn", c2, config, rng),
                AttentionBlock::new(store, "den.up2_attn", c1, config, rng),
            ]
        } else {
            Vec::new()
        };
        Self {
            config: config.clone(),
            down,
            mid,
            up,
            head,
            time,
            attn,
            decoder_attn,
        }
    }

    /// Predicted noise with the dims of `x_t`. `x_e` is required exactly
    /// when the model was built with events; its spatial extents must be the
    /// bottleneck's, or a power-of-two multiple of it.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x_t: Var,
        x_hz: Var,
        t: usize,
        x_e: Option<Var>,
    ) -> Result<Var> {
        let dims = g.dims(x_t).to_vec();
        let &[c, h, w] = dims.as_slice() else {
            return Err(Error::shape(format!("latent must be [C,H,W], got {dims:?}")));
        };
        if c != self.config.latent_channels || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(format!(
                "latent {dims:?}: need {} channels and extents divisible by 4",
                self.config.latent_channels
            )));
        }
        if g.dims(x_hz) != dims.as_slice() {
            return Err(Error::shape(format!("x_hz {:?} vs x_t {dims:?}", g.dims(x_hz))));
        }
        let x_e = match (self.config.events, x_e) {
            (true, Some(e)) => Some(align(g, e, h / 4, w / 4)?),
            (false, None) => None,
            (true, None) => return Err(Error::domain("model expects event features")),
            (false, Some(_)) => return Err(Error::domain("model was built without event conditioning")),
        };

        let emb = g.leaf(
            vec![1, self.config.time_dim],
            timestep_embedding(t, self.config.time_dim),
        )?;
        let mut temb = Vec::with_capacity(4);
        for lin in &self.time {
            temb.push(lin.forward(g, store, emb)?);
        }
        let stage = |g: &mut Graph, conv: &Conv2d, x: Var, te: Var| -> Result<Var> {
            let y = conv.forward(g, store, x)?;
            let y = g.add_channel(y, te)?;
            Ok(g.silu(y))
        };

        let inp = g.concat(&[x_t, x_hz])?;
        let d1 = stage(g, &self.down[0], inp, temb[0])?;
        let p1 = g.avg_pool2(d1)?;
        let d2 = stage(g, &self.down[1], p1, temb[1])?;
        let p2 = g.avg_pool2(d2)?;
        let d3 = stage(g, &self.down[2], p2, temb[2])?;
        let mut m = stage(g, &self.mid, d3, temb[3])?;
        if let (Some(block), Some(e)) = (&self.attn, x_e) {
            m = block.forward(g, store, m, e)?;
        }

        let cat = g.concat(&[m, d3])?;
        let y = self.up[0].forward(g, store, cat)?;
        let mut u3 = g.silu(y);
        if let (Some(block), Some(e)) = (self.decoder_attn.first(), x_e) {
            u3 = block.forward(g, store, u3, e)?;
        }
        let up = g.upsample2(u3)?;
        let cat = g.concat(&[up, d2])?;
        let y = self.up[1].forward(g, store, cat)?;
        let mut u2 = g.silu(y);
        if let (Some(block), Some(e)) = (self.decoder_attn.get(1), x_e) {
            let e2 = g.upsample2(e)?;
            u2 = block.forward(g, store, u2, e2)?;
        }
        let up = g.upsample2(u2)?;
        let cat = g.concat(&[up, d1])?;
        let y = self.up[2].forward(g, store, cat)?;
        let u1 = g.silu(y);
        self.head.forward(g, store, u1)
    }
}

/// Average-pool `x_e` down to `h x w`.
fn align(g: &mut Graph, mut e: Var, h: usize, w: usize) -> Result<Var> {
    loop {
        let d = g.dims(e).to_vec();
        if d.len() != 3 {
            return Err(Error::shape(format!("event feature must be [C,H,W], got {d:?}")));
        }
        if d[1] == h && d[2] == w {
            return Ok(e);
        }
        if d[1] < 2 * h || d[2] < 2 * w || !d[1].is_multiple_of(2) || !d[2].is_multiple_of(2) {
            return Err(Error::shape(format!(
                "event feature {}x{} cannot be pooled to the {h}x{w} bottleneck",
                d[1], d[2]
            )));
        }
        e = g.avg_pool2(e)?;
    }
}

/// How the reverse process is started from a hazy latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// `x_T = sqrt(abar_T) x_hz + sqrt(1 - abar_T) z`
    #[default]
    Scheduled,
    /// `x_T = x_hz + z`
    PaperLiteral,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scheduled" => Ok(InitMode::Scheduled),
            "paper-literal" => Ok(InitMode::PaperLiteral),
            _ => Err(Error::domain(format!("unknown init {s:?} (scheduled|paper-literal)"))),
        }
    }
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::Scheduled => "scheduled",
            InitMode::PaperLiteral => "paper-literal",
        })
    }
}

pub fn initial_latent(x_hz: &Tensor, init: InitMode, sched: &NoiseSchedule, rng: &mut Rng) -> Result<Tensor> {
    let z = gaussian_sample(rng, x_hz.dims())?;
    let (a, b) = match init {
        InitMode::Scheduled => {
            let ab = sched.alpha_bar(sched.steps());
            (ab.sqrt(), (1.0 - ab).sqrt())
        }
        InitMode::PaperLiteral => (1.0, 1.0),
    };
    x_hz.zip_map(&z, |x, z| (a * x as f64 + b * z as f64) as f32)
}

/// Denoiser, event encoder, codec and their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub codec: LatentCodec,
    pub store: ParamStore,
    pub denoiser: ToyDenoiser,
    pub encoder: Option<EventEncoder>,
}

impl ToyModel {
    pub fn new(config: ModelConfig, codec: LatentCodec, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let denoiser = ToyDenoiser::new(&mut store, &config, rng);
        let encoder = config
            .events
            .then(|| EventEncoder::new(&mut store, "enc", config.encoder, rng));
        Ok(Self {
            config,
            codec,
            store,
            denoiser,
            encoder,
        })
    }

    /// Noise prediction from a pyramid leaf, running the encoder in-graph.
    pub fn predict_graph(&self, g: &mut Graph, x_t: Var, x_hz: Var, t: usize, tpr: Option<Var>) -> Result<Var> {
        let x_e = match (&self.encoder, tpr) {
            (Some(enc), Some(p)) => Some(enc.forward(g, &self.store, p)?),
            (Some(_), None) => return Err(Error::domain("model expects an event pyramid")),
            (None, _) => None,
        };
        self.denoiser.forward(g, &self.store, x_t, x_hz, t, x_e)
    }

    pub fn event_feature(&self, tpr: &TemporalPyramid) -> Result<Tensor> {
        let enc = self
            .encoder
            .as_ref()
            .ok_or_else(|| Error::domain("model was built without an event encoder"))?;
        enc.encode(&self.store, tpr)
    }

    /// Bind the conditioning of one hazy image.
    pub fn conditioned(&self, hazy: &Image, tpr: Option<&TemporalPyramid>) -> Result<Conditioned<'_>> {
        let x_hz = self.codec.encode(hazy)?;
        let x_e = match (self.config.events, tpr) {
            (true, Some(p)) => Some(self.event_feature(p)?),
            (true, None) => return Err(Error::domain("model expects an event pyramid")),
            (false, _) => None,
        };
        Ok(Conditioned { model: self, x_hz, x_e })
    }

    pub fn dehaze(
        &self,
        hazy: &Image,
        tpr: Option<&TemporalPyramid>,
        sampler: SamplerKind,
        init: InitMode,
        sched: &NoiseSchedule,
        rng: &mut Rng,
    ) -> Result<Image> {
        let cond = self.conditioned(hazy, tpr)?;
        let x_t = initial_latent(&cond.x_hz, init, sched, rng)?;
        let x0 = sampler.run(&cond, &x_t, sched, rng)?;
        if !x0.all_finite() {
            return Err(Error::domain("sampler produced non-finite values"));
        }
        self.codec.decode(&x0)
    }

    pub fn meta(&self) -> Pairs {
        let mut m = vec![pair("codec", self.codec)];
        m.extend(self.config.to_pairs());
        m
    }

    pub fn save(&self, dir: impl AsRef<Path>, extra: &[(String, String)]) -> Result<()> {
        let mut meta = self.meta();
        meta.extend_from_slice(extra);
        save_checkpoint(dir, &self.store, &meta)
    }

    /// Rebuild the architecture from checkpoint metadata and load its weights.
    /// Returns the model and all stored metadata.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, Pairs)> {
        let ck = load_checkpoint(dir)?;
        let config = ModelConfig::from_pairs(&ck.meta)?;
        let codec = ck.meta("codec").unwrap_or("identity").parse()?;
        let mut model = Self::new(config, codec, &mut Rng::new(0))?;
        if model.store.len() != ck.params.len() {
            return Err(Error::shape(format!(
                "checkpoint has {} tensors, architecture needs {}",
                ck.params.len(),
                model.store.len()
            )));
        }
        for (dst, src) in model.store.iter_mut().zip(ck.params.iter()) {
            if dst.name != src.name || dst.value.dims() != src.value.dims() {
                return Err(Error::shape(format!(
                    "checkpoint tensor {} {:?} does not match {} {:?}",
                    src.name,
                    src.value.dims(),
                    dst.name,
                    dst.value.dims()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok((model, ck.meta))
    }
}

/// A model with fixed conditioning, usable by the samplers.
#[derive(Debug, Clone)]
pub struct Conditioned<'a> {
    model: &'a ToyModel,
    pub x_hz: Tensor,
    pub x_e: Option<Tensor>,
}

impl Denoiser for Conditioned<'_> {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let xt = g.leaf_f32(x_t.dims(), x_t.data())?;
        let hz = g.leaf_f32(self.x_hz.dims(), self.x_hz.data())?;
        let xe = match &self.x_e {
            Some(e) => Some(g.leaf_f32(e.dims(), e.data())?),
            None => None,
        };
        let out = self.model.denoiser.forward(&mut g, &self.model.store, xt, hz, t, xe)?;
        to_tensor(&g, out)
    }

    /// Both codecs map `[0, 1]` images into `[0, 1]` latents.
    fn x0_bounds(&self) -> Option<(f32, f32)> {
        Some((0.0, 1.0))
    }
}
