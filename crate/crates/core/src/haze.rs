//! Atmospheric scattering: `I = J t + A (1 - t)`, its inverse, the
//! dynamic-range compression it causes, and intensity histograms.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

/// Transmission: one value for the whole frame or an `[H, W]` map.
#[derive(Debug, Clone, PartialEq)]
pub enum Transmission {
    Constant(f32),
    Map(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazeParams {
    /// Air-light, either one value shared by all channels or one per channel.
    pub airlight: Vec<f32>,
    pub transmission: Transmission,
}

impl HazeParams {
    pub fn new(airlight: Vec<f32>, transmission: Transmission) -> Result<Self> {
        if airlight.is_empty() || airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::domain(format!(
                "air-light {airlight:?} must be nonempty and in [0,1]"
            )));
        }
        let t_ok = match &transmission {
            Transmission::Constant(t) => (0.0..=1.0).contains(t),
            Transmission::Map(m) => m.ndim() == 2 && m.data().iter().all(|t| (0.0..=1.0).contains(t)),
        };
        if !t_ok {
            return Err(Error::domain(
                "transmission must be an [H,W] map or scalar with values in [0,1]",
            ));
        }
        Ok(Self { airlight, transmission })
    }

    pub fn uniform(airlight: f32, t: f32) -> Result<Self> {
        Self::new(vec![airlight], Transmission::Constant(t))
    }

    fn check_extents(&self, img: &Image) -> Result<()> {
        if self.airlight.len() != 1 && self.airlight.len() != img.channels() {
            return Err(Error::shape(format!(
                "{} air-light values for a {}-channel image",
                self.airlight.len(),
                img.channels()
            )));
        }
        if let Transmission::Map(m) = &self.transmission {
            if m.dims() != [img.height(), img.width()] {
                return Err(Error::shape(format!(
                    "transmission map {:?} vs image {}x{}",
                    m.dims(),
                    img.height(),
                    img.width()
                )));
            }
        }
        Ok(())
    }

    fn airlight_for(&self, c: usize) -> f32 {
        if self.airlight.len() == 1 {
            self.airlight[0]
        } else {
            self.airlight[c]
        }
    }

    fn t_at(&self, y: usize, x: usize, w: usize) -> f32 {
        match &self.transmission {
            Transmission::Constant(t) => *t,
            Transmission::Map(m) => m.data()[y * w + x],
        }
    }
}

pub fn synthesize_haze(clean: &Image, params: &HazeParams) -> Result<Image> {
    params.check_extents(clean)?;
    let w = clean.width();
    Image::from_fn(clean.height(), w, clean.channels(), |c, y, x| {
        let t = params.t_at(y, x, w) as f64;
        let a = params.airlight_for(c) as f64;
        // one rounding to f32 keeps the inversion error near the storage ulp
        (clean.get(c, y, x) as f64 * t + a * (1.0 - t)).clamp(0.0, 1.0) as f32
    })
}

/// Recover scene radiance `J = (I - A (1 - t)) / max(t, t_floor)`. In strict
/// mode any transmission below `t_floor` is an error naming the pixel.
pub fn invert_haze(hazy: &Image, params: &HazeParams, t_floor: f32, strict: bool) -> Result<Image> {
    params.check_extents(hazy)?;
    if !(t_floor > 0.0) {
        return Err(Error::domain(format!("t_floor must be positive, got {t_floor}")));
    }
    let w = hazy.width();
    if strict {
        for y in 0..hazy.height() {
            for x in 0..w {
                let t = params.t_at(y, x, w);
                if t < t_floor {
                    return Err(Error::TransmissionFloor {
                        y,
                        x,
                        value: t,
                        floor: t_floor,
                    });
                }
            }
        }
    }
    Image::from_fn(hazy.height(), w, hazy.channels(), |c, y, x| {
        let t = params.t_at(y, x, w) as f64;
        let a = params.airlight_for(c) as f64;
        let i = hazy.get(c, y, x) as f64;
        ((i - a * (1.0 - t)) / t.max(t_floor as f64)).clamp(0.0, 1.0) as f32
    })
}

/// `t = exp(-beta * depth)`, elementwise.
pub fn transmission_from_depth(depth: &Tensor, beta: f32) -> Result<Tensor> {
    if !(beta >= 0.0) {
        return Err(Error::domain(format!("beta must be non-negative, got {beta}")));
    }
    if let Some(i) = depth.data().iter().position(|d| !(*d >= 0.0)) {
        return Err(Error::domain(format!(
            "depth {} at index {i} is negative or NaN",
            depth.data()[i]
        )));
    }
    Ok(depth.map(|d| (-(beta as f64) * d as f64).exp() as f32))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrReport {
    /// True dynamic range `J_max / J_min`.
    pub k: f64,
    /// `J_min * t`
    pub a: f64,
    /// `A * (1 - t)`
    pub b: f64,
    pub dr_obs: f64,
    pub compressed: bool,
}

/// Observed dynamic range of a scene with true range `k` under constant
/// transmission `t`: `(k a + b) / (a + b)`. `t = 1` (no haze) is accepted and
/// gives `dr_obs = k`.
pub fn dynamic_range_report(k: f64, j_min: f64, t: f64, airlight: f64) -> Result<DrReport> {
    if !(k > 1.0) {
        return Err(Error::domain(format!("true dynamic range must exceed 1, got {k}")));
    }
    if !(j_min > 0.0) {
        return Err(Error::domain(format!("j_min must be positive, got {j_min}")));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::domain(format!("transmission must lie in (0,1], got {t}")));
    }
    if !(airlight > 0.0) {
        return Err(Error::domain(format!("air-light must be positive, got {airlight}")));
    }
    let a = j_min * t;
    let b = airlight * (1.0 - t);
    let dr_obs = (k * a + b) / (a + b);
    Ok(DrReport {
        k,
        a,
        b,
        dr_obs,
        compressed: dr_obs < k,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub min: f32,
    pub max: f32,
    /// Central 1st-to-99th percentile range of luminance.
    pub spread: f32,
    /// `max / max(min, 1/255)`.
    pub dr_ratio: f32,
}

/// Equal-width luminance histogram over [0, 1]. Bins are half-open except
/// the last, which includes 1.0.
pub fn intensity_histogram(img: &Image, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::domain(format!("need at least 2 bins, got {bins}")));
    }
    let lum = img.luminance();
    let values = lum.values();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = ((v as f64 * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let pick = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    let min = sorted[0];
    let max = *sorted.last().unwrap();
    Ok(Histogram {
        counts,
        min,
        max,
        spread: pick(0.99) - pick(0.01),
        dr_ratio: max / min.max(1.0 / 255.0),
    })
}
