//! Temporal pyramid voxelization of an event window and the convolutional
//! encoder that turns it into a guidance feature map.
//!
//! Level `l` (1-based) of a pyramid over `[t0, t1)` covers a span of length
//! `(t1 - t0) / 2^(l-1)`, anchored at the window end by default, and splits it
//! into `M` equal half-open bins. Each event adds its polarity to the cell of
//! every (level, bin) whose span contains it.

use crate::autodiff::nn::Conv2d;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PyramidAnchor {
    /// Levels shrink toward `t1`: `[t1 - D/2^(l-1), t1)`.
    #[default]
    End,
    /// Levels shrink toward `t0`: `[t0, t0 + D/2^(l-1))`.
    Start,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolarityMode {
    /// One channel per bin holding the signed polarity sum.
    #[default]
    Signed,
    /// Two channels per bin: positive count, then negative count.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TprOptions {
    pub anchor: PyramidAnchor,
    pub polarity: PolarityMode,
    /// Divide every cell by the number of events in the window.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPyramid {
    pub levels: usize,
    pub bins: usize,
    /// `[L*M, H, W]` (or `[2*L*M, H, W]` in split-polarity mode).
    pub grid: Tensor,
}

/// Bin of timestamp `t` at `level` (1-based), or `None` if the level's span
/// excludes it. Exact integer arithmetic: no rounding at bin edges.
pub fn level_bin(t: u64, t0: u64, t1: u64, level: usize, bins: usize, anchor: PyramidAnchor) -> Option<usize> {
    if t < t0 || t >= t1 {
        return None;
    }
    let d = (t1 - t0) as u128;
    let scale = 1u128 << (level - 1);
    let m = bins as u128;
    match anchor {
        PyramidAnchor::End => {
            let back = (t1 - t) as u128 * scale;
            (back <= d).then(|| (m * (d - back) / d) as usize)
        }
        PyramidAnchor::Start => {
            let fwd = (t - t0) as u128 * scale;
            (fwd < d).then(|| (m * fwd / d) as usize)
        }
    }
}

pub fn build_tpr(
    stream: &EventStream,
    t0: u64,
    t1: u64,
    levels: usize,
    bins: usize,
    opts: TprOptions,
) -> Result<TemporalPyramid> {
    if t0 >= t1 {
        return Err(Error::InvalidWindow { t0, t1 });
    }
    if levels == 0 || bins == 0 {
        return Err(Error::domain(format!(
            "levels ({levels}) and bins ({bins}) must be positive"
        )));
    }
    if levels > 64 {
        return Err(Error::domain(format!("{levels} levels exceed the 64-level limit")));
    }
    let (h, w) = (stream.height() as usize, stream.width() as usize);
    let per_bin = match opts.polarity {
        PolarityMode::Signed => 1,
        PolarityMode::Split => 2,
    };
    let channels = levels * bins * per_bin;
    let mut grid = Tensor::zeros([channels, h, w])?;
    let window = stream.slice_window(t0, t1)?;
    let data = grid.data_mut();
    for e in window.events() {
        let cell = e.y as usize * w + e.x as usize;
        for level in 1..=levels {
            let Some(b) = level_bin(e.t, t0, t1, level, bins, opts.anchor) else {
                continue;
            };
            let slot = (level - 1) * bins + b;
            match opts.polarity {
                PolarityMode::Signed => data[slot * h * w + cell] += e.p as f32,
                PolarityMode::Split => {
                    let ch = 2 * slot + usize::from(e.p < 0);
                    data[ch * h * w + cell] += 1.0;
                }
            }
        }
    }
    if opts.normalize && !window.is_empty() {
        let n = window.len() as f32;
        data.iter_mut().for_each(|v| *v /= n);
    }
    Ok(TemporalPyramid { levels, bins, grid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub hidden: [usize; 2],
    pub out_channels: usize,
}

impl EncoderConfig {
    pub fn for_pyramid(levels: usize, bins: usize, out_channels: usize) -> Self {
        Self {
            in_channels: levels * bins,
            hidden: [16, 32],
            out_channels,
        }
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::for_pyramid(3, 2, 32)
    }
}

/// Three 3x3 convolutions with ReLU; 2x2 average pooling after the first two.
/// Spatial extents shrink by 4.
#[derive(Debug, Clone, PartialEq)]
pub struct EventEncoder {
    pub config: EncoderConfig,
    pub stages: [Conv2d; 3],
}

pub const ENCODER_POOL_DEPTH: usize = 2;

impl EventEncoder {
    pub fn new(store: &mut ParamStore, name: &str, config: EncoderConfig, rng: &mut Rng) -> Self {
        let [h1, h2] = config.hidden;
        Self {
            config,
            stages: [
                Conv2d::new(store, &format!("{name}.conv1"), config.in_channels, h1, 3, rng),
                Conv2d::new(store, &format!("{name}.conv2"), h1, h2, 3, rng),
                Conv2d::new(store, &format!("{name}.conv3"), h2, config.out_channels, 3, rng),
            ],
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let c = g.dims(x)[0];
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "encoder expects {} input channels, pyramid has {c}",
                self.config.in_channels
            )));
        }
        let mut h = x;
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.forward(g, store, h)?;
            h = g.relu(h);
            if i < 2 {
                h = g.avg_pool2(h)?;
            }
        }
        Ok(h)
    }

    /// Feature map `[C, H/4, W/4]` of a pyramid.
    pub fn encode(&self, store: &ParamStore, tpr: &TemporalPyramid) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.leaf_f32(tpr.grid.dims(), tpr.grid.data())?;
        let y = self.forward(&mut g, store, x)?;
        Tensor::new(g.dims(y).to_vec(), g.value(y).iter().map(|&v| v as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    #[test]
    fn empty_stream_gives_zero_grid() {
        let s = EventStream::empty(4, 3).unwrap();
        let p = build_tpr(&s, 0, 1000, 3, 2, TprOptions::default()).unwrap();
        assert_eq!(p.grid.dims(), &[6, 3, 4]);
        assert!(p.grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_event_after_midpoint() {
        let s = EventStream::new(2, 2, vec![Event::new(501, 1, 0, 1)]).unwrap();
        let p = build_tpr(&s, 0, 1000, 3, 2, TprOptions::default()).unwrap();
        let at = |ch: usize| p.grid.data()[ch * 4 + 1];
        // level 1 bin 2, level 2 bin 1, level 3 excluded
        assert_eq!(
            [at(0), at(1), at(2), at(3), at(4), at(5)],
            [0.0, 1.0, 1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(p.grid.data().iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn opposite_polarities_cancel() {
        let s = EventStream::new(2, 2, vec![Event::new(10, 0, 0, 1), Event::new(20, 0, 0, -1)]).unwrap();
        let p = build_tpr(&s, 0, 1000, 1, 2, TprOptions::default()).unwrap();
        assert!(p.grid.data().iter().all(|&v| v == 0.0));
        let split = build_tpr(
            &s,
            0,
            1000,
            1,
            2,
            TprOptions {
                polarity: PolarityMode::Split,
                ..TprOptions::default()
            },
        )
        .unwrap();
        assert_eq!(split.grid.dims(), &[4, 2, 2]);
        assert_eq!(split.grid.data()[0], 1.0);
        assert_eq!(split.grid.data()[4], 1.0);
    }

    #[test]
    fn normalization_and_anchor() {
        let s = EventStream::new(1, 1, vec![Event::new(100, 0, 0, 1), Event::new(900, 0, 0, 1)]).unwrap();
        let start = TprOptions {
            anchor: PyramidAnchor::Start,
            normalize: true,
            ..TprOptions::default()
        };
        let p = build_tpr(&s, 0, 1000, 2, 1, start).unwrap();
        // level 1 sees both, level 2 ([0,500)) only t=100
        assert_eq!(p.grid.data(), &[1.0, 0.5]);
    }

    #[test]
    fn window_edges() {
        assert_eq!(level_bin(1000, 0, 1000, 1, 2, PyramidAnchor::End), None);
        assert_eq!(level_bin(500, 0, 1000, 2, 2, PyramidAnchor::End), Some(0));
        assert_eq!(level_bin(499, 0, 1000, 2, 2, PyramidAnchor::End), None);
        assert_eq!(level_bin(750, 0, 1000, 2, 2, PyramidAnchor::End), Some(1));
    }

    #[test]
    fn invalid_arguments() {
        let s = EventStream::empty(2, 2).unwrap();
        assert!(build_tpr(&s, 5, 5, 3, 2, TprOptions::default()).is_err());
        assert!(build_tpr(&s, 0, 5, 0, 2, TprOptions::default()).is_err());
        assert!(build_tpr(&s, 0, 5, 3, 0, TprOptions::default()).is_err());
    }

    #[test]
    fn encoder_output_extents_and_zero_input() {
        let mut store = ParamStore::new();
        let enc = EventEncoder::new(&mut store, "enc", EncoderConfig::default(), &mut Rng::new(1));
        let tpr = TemporalPyramid {
            levels: 3,
            bins: 2,
            grid: Tensor::zeros([6, 64, 64]).unwrap(),
        };
        let x = enc.encode(&store, &tpr).unwrap();
        assert_eq!(x.dims(), &[32, 16, 16]);
        assert!(x.data().iter().all(|&v| v == 0.0));
        let wrong = TemporalPyramid {
            levels: 1,
            bins: 2,
            grid: Tensor::zeros([2, 8, 8]).unwrap(),
        };
        assert!(enc.encode(&store, &wrong).is_err());
    }
}
