//! Image-space objective: `lambda_pix * L1 + lambda_perc * L_perc`.
//!
//! `L_perc` here is a proxy, not a learned perceptual metric: the mean squared
//! distance between the features of a fixed, randomly initialised two-layer
//! conv net (3x3 conv, ReLU, 3x3 conv). The weights come from a constant seed
//! and never train.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

pub const PERCEPTUAL_SEED: u64 = 0x5eed_f00d;
pub const PERCEPTUAL_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub pix: f64,
    pub perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { pix: 1.0, perc: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.pix >= 0.0 && self.perc >= 0.0) {
            return Err(Error::domain(format!(
                "loss weights must be non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub perceptual: f64,
    pub total: f64,
}

/// Fixed feature extractor for `channels`-channel inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptualProxy {
    channels: usize,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

impl PerceptualProxy {
    pub fn new(channels: usize) -> Self {
        let mut rng = Rng::new(PERCEPTUAL_SEED);
        let k = PERCEPTUAL_WIDTH;
        let s1 = (2.0 / (channels * 9) as f64).sqrt();
        let s2 = (2.0 / (k * 9) as f64).sqrt();
        let w1 = (0..k * channels * 9).map(|_| rng.normal() * s1).collect();
        let w2 = (0..k * k * 9).map(|_| rng.normal() * s2).collect();
        Self { channels, w1, w2 }
    }

    pub fn features(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let k = PERCEPTUAL_WIDTH;
        let w1 = g.leaf(vec![k, self.channels, 3, 3], self.w1.clone())?;
        let w2 = g.leaf(vec![k, k, 3, 3], self.w2.clone())?;
        let h = g.conv2d(x, w1, None, 1, 1)?;
        let h = g.relu(h);
        g.conv2d(h, w2, None, 1, 1)
    }
}

/// Graph form; returns `(l1, perceptual, total)` nodes.
pub fn total_loss_graph(g: &mut Graph, out: Var, target: Var, weights: LossWeights) -> Result<(Var, Var, Var)> {
    if g.dims(out) != g.dims(target) {
        return Err(Error::shape(format!(
            "loss inputs {:?} vs {:?}",
            g.dims(out),
            g.dims(target)
        )));
    }
    let proxy = PerceptualProxy::new(g.dims(out)[0]);
    let d = g.sub(out, target)?;
    let l1 = g.mean_abs(d);
    let fa = proxy.features(g, out)?;
    let fb = proxy.features(g, target)?;
    let perc = g.mse(fa, fb)?;
    let a = g.scale(l1, weights.pix);
    let b = g.scale(perc, weights.perc);
    let total = g.add(a, b)?;
    Ok((l1, perc, total))
}

pub fn total_loss(out: &Image, target: &Image, weights: LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    if !out.same_extents(target) {
        return Err(Error::shape(format!(
            "loss images {}x{}x{} vs {}x{}x{}",
            out.channels(),
            out.height(),
            out.width(),
            target.channels(),
            target.height(),
            target.width()
        )));
    }
    let mut g = Graph::new();
    let (a, b) = (out.to_tensor(), target.to_tensor());
    let a = g.leaf_f32(a.dims(), a.data())?;
    let b = g.leaf_f32(b.dims(), b.data())?;
    let (l1, perc, total) = total_loss_graph(&mut g, a, b, weights)?;
    Ok(LossBreakdown {
        l1: g.scalar(l1),
        perceptual: g.scalar(perc),
        total: g.scalar(total),
    })
}
