//! Procedural clean/hazy/event triplets.
//!
//! Clean scenes are a two-colour gradient with a few flat rectangles and,
//! sometimes, a stripe texture. Depth follows the same layout (rectangles
//! are nearer than the background ramp), so transmission edges line up with
//! scene edges. Events come from the clean scene rendered under a short
//! camera motion that ends at the identity pose, i.e. at the pose of the
//! still image.

use std::fs;
use std::path::Path;

use super::config::{format_kv, pair, parse_kv, parse_value, Pairs};
use crate::error::{Error, Result};
use crate::events::{read_events, write_events, EventFormat, EventStream};
use crate::exec::{map_indices, ExecMode};
use crate::haze::{synthesize_haze, transmission_from_depth, HazeParams, Transmission};
use crate::image::{load_image, save_image, Image};
use crate::rng::Rng;
use crate::sim::{render_trajectory, simulate_events, MotionSample, MotionTrajectory, SimConfig};
use crate::tensor::{load_tensor, save_tensor, Tensor};
use crate::tpr::{build_tpr, TemporalPyramid, TprOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n: usize,
    /// Image side length in pixels.
    pub size: usize,
    pub seed: u64,
    /// Scattering coefficient; 0 disables haze.
    pub haze_beta: f32,
    pub airlight_min: f32,
    pub airlight_max: f32,
    /// Peak camera translation in pixels; 0 gives a static camera.
    pub motion: f64,
    pub window_us: u64,
    pub frames: usize,
    pub contrast: f64,
    pub levels: usize,
    pub bins: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 80,
            size: 16,
            seed: 0,
            haze_beta: 1.2,
            airlight_min: 0.75,
            airlight_max: 0.95,
            motion: 1.5,
            window_us: 33_000,
            frames: 12,
            contrast: 0.15,
            levels: 3,
            bins: 2,
        }
    }
}

impl DatasetConfig {
    pub fn to_pairs(&self) -> Pairs {
        vec![
            pair("n", self.n),
            pair("size", self.size),
            pair("seed", self.seed),
            pair("haze_beta", self.haze_beta),
            pair("airlight_min", self.airlight_min),
            pair("airlight_max", self.airlight_max),
            pair("motion", self.motion),
            pair("window_us", self.window_us),
            pair("frames", self.frames),
            pair("contrast", self.contrast),
            pair("levels", self.levels),
            pair("bins", self.bins),
        ]
    }

    /// Apply overrides on top of `self`; unknown keys are errors.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            match k.as_str() {
                "n" => self.n = parse_value(k, v)?,
                "size" => self.size = parse_value(k, v)?,
                "seed" => self.seed = parse_value(k, v)?,
                "haze_beta" => self.haze_beta = parse_value(k, v)?,
                "airlight_min" => self.airlight_min = parse_value(k, v)?,
                "airlight_max" => self.airlight_max = parse_value(k, v)?,
                "motion" => self.motion = parse_value(k, v)?,
                "window_us" => self.window_us = parse_value(k, v)?,
                "frames" => self.frames = parse_value(k, v)?,
                "contrast" => self.contrast = parse_value(k, v)?,
                "levels" => self.levels = parse_value(k, v)?,
                "bins" => self.bins = parse_value(k, v)?,
                _ => return Err(Error::domain(format!("unknown dataset key {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::domain("dataset needs at least one pair"));
        }
        if self.size == 0 || !self.size.is_multiple_of(4) || self.size > u16::MAX as usize {
            return Err(Error::domain(format!(
                "image size {} must be a positive multiple of 4",
                self.size
            )));
        }
        if !(0.0 <= self.airlight_min && self.airlight_min <= self.airlight_max && self.airlight_max <= 1.0) {
            return Err(Error::domain("air-light range must satisfy 0 <= min <= max <= 1"));
        }
        if !(self.haze_beta >= 0.0) || !(self.motion >= 0.0) {
            return Err(Error::domain("haze_beta and motion must be non-negative"));
        }
        if self.frames < 2 || self.window_us < self.frames as u64 {
            return Err(Error::domain(
                "need at least two frames and a window of at least one microsecond per frame",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPair {
    pub clean: Image,
    pub hazy: Image,
    pub events: EventStream,
    pub tpr: TemporalPyramid,
}

fn color(rng: &mut Rng) -> [f32; 3] {
    [0; 3].map(|_| rng.uniform_range(0.1, 0.9) as f32)
}

struct Rect {
    y0: usize,
    x0: usize,
    y1: usize,
    x1: usize,
    color: [f32; 3],
    depth: f32,
}

impl Rect {
    fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

/// Clean scene and its depth map.
fn scene(size: usize, rng: &mut Rng) -> Result<(Image, Tensor)> {
    let (c0, c1) = (color(rng), color(rng));
    let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let ramp = move |y: usize, x: usize| {
        let s = size as f64 - 1.0;
        ((((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy) / std::f64::consts::SQRT_2) + 0.5) as f32
    };
    let n_rects = 2 + rng.below(3);
    let rects: Vec<Rect> = (0..n_rects)
        .map(|_| {
            let h = size / 4 + rng.below(size / 4 + 1);
            let w = size / 4 + rng.below(size / 4 + 1);
            let y0 = rng.below(size - h + 1);
            let x0 = rng.below(size - w + 1);
            Rect {
                y0,
                x0,
                y1: y0 + h,
                x1: x0 + w,
                color: color(rng),
                depth: rng.uniform_range(0.2, 0.9) as f32,
            }
        })
        .collect();
    let stripes = (rng.uniform() < 0.5).then(|| {
        let period = rng.uniform_range(3.0, 6.0);
        let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
        (period, phase, rng.uniform() < 0.5)
    });
    let top = |y: usize, x: usize| rects.iter().rev().find(|r| r.contains(y, x));
    let clean = Image::from_fn(size, size, 3, |c, y, x| {
        let mut v = match top(y, x) {
            Some(r) => r.color[c],
            None => {
                let a = ramp(y, x);
                c0[c] * (1.0 - a) + c1[c] * a
            }
        };
        if let Some((period, phase, vertical)) = stripes {
            let u = if vertical { x } else { y } as f64;
            v += (0.08 * (std::f64::consts::TAU * u / period + phase).sin()) as f32;
        }
        v.clamp(0.0, 1.0)
    })?
    .quantized();
    let depth: Vec<f32> = (0..size * size)
        .map(|i| {
            let (y, x) = (i / size, i % size);
            match top(y, x) {
                Some(r) => r.depth,
                None => 1.0 + 1.2 * ramp(y, x),
            }
        })
        .collect();
    Ok((clean, Tensor::new([size, size], depth)?))
}

/// Similarity motion that reaches the identity pose at the window end.
fn trajectory(cfg: &DatasetConfig, rng: &mut Rng) -> Result<MotionTrajectory> {
    let amp = cfg.motion;
    let vx = rng.uniform_range(-amp, amp);
    let vy = rng.uniform_range(-amp, amp);
    let (rot, zoom) = if amp > 0.0 {
        (rng.uniform_range(-0.05, 0.05), rng.uniform_range(-0.03, 0.03))
    } else {
        (0.0, 0.0)
    };
    let last = cfg.window_us - 1;
    let samples = (0..cfg.frames)
        .map(|k| {
            let tau = k as f64 / (cfg.frames - 1) as f64;
            let back = tau - 1.0;
            MotionSample {
                t: (last as f64 * tau).round() as u64,
                dx: vx * back,
                dy: vy * back,
                rot: rot * back,
                scale: 1.0 + zoom * back,
            }
        })
        .collect();
    MotionTrajectory::new(samples)
}

fn make_pair(cfg: &DatasetConfig, index: usize) -> Result<ToyPair> {
    let mut rng = Rng::stream(cfg.seed, index as u64);
    let (clean, depth) = scene(cfg.size, &mut rng)?;
    let airlight = rng.uniform_range(cfg.airlight_min as f64, cfg.airlight_max as f64) as f32;
    let t = transmission_from_depth(&depth, cfg.haze_beta)?;
    let hazy = synthesize_haze(&clean, &HazeParams::new(vec![airlight], Transmission::Map(t))?)?.quantized();
    let frames = render_trajectory(&clean.luminance(), &trajectory(cfg, &mut rng)?)?;
    let sim = SimConfig {
        c_pos: cfg.contrast,
        c_neg: cfg.contrast,
        ..SimConfig::default()
    };
    let events = simulate_events(&frames, &sim)?;
    let tpr = build_tpr(&events, 0, cfg.window_us, cfg.levels, cfg.bins, TprOptions::default())?;
    Ok(ToyPair {
        clean,
        hazy,
        events,
        tpr,
    })
}

/// `cfg.n` pairs; pair `i` depends only on `(cfg, i)`.
pub fn build_toy_dataset(cfg: &DatasetConfig, mode: ExecMode) -> Result<Vec<ToyPair>> {
    cfg.validate()?;
    map_indices(cfg.n, mode, |i| make_pair(cfg, i)).into_iter().collect()
}

pub const DATASET_FILE: &str = "dataset.txt";

fn pair_stem(i: usize) -> String {
    format!("pair{i:04}")
}

pub fn save_dataset(dir: impl AsRef<Path>, cfg: &DatasetConfig, pairs: &[ToyPair]) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let stem = pair_stem(i);
        let names = [
            format!("{stem}_clean.ppm"),
            format!("{stem}_hazy.ppm"),
            format!("{stem}_events.bin"),
            format!("{stem}_tpr.ten"),
        ];
        save_image(&p.clean, dir.join(&names[0]))?;
        save_image(&p.hazy, dir.join(&names[1]))?;
        write_events(&p.events, dir.join(&names[2]), EventFormat::Bin)?;
        save_tensor(&p.tpr.grid, dir.join(&names[3]))?;
        files.extend(names);
    }
    let path = dir.join(DATASET_FILE);
    fs::write(&path, format_kv(&cfg.to_pairs())).map_err(|e| Error::io(&path, e))?;
    files.push(DATASET_FILE.to_string());
    Ok(files)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetConfig, Vec<ToyPair>)> {
    let dir = dir.as_ref();
    let path = dir.join(DATASET_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut cfg = DatasetConfig::default();
    cfg.apply(&parse_kv(&text, &path)?)?;
    cfg.validate()?;
    let pairs = (0..cfg.n)
        .map(|i| {
            let stem = pair_stem(i);
            let grid = load_tensor(dir.join(format!("{stem}_tpr.ten")))?;
            let expected = [cfg.levels * cfg.bins, cfg.size, cfg.size];
            if grid.dims() != expected {
                return Err(Error::shape(format!(
                    "{stem}_tpr.ten has dims {:?}, expected {expected:?}",
                    grid.dims()
                )));
            }
            let size = cfg.size as u16;
            Ok(ToyPair {
                clean: load_image(dir.join(format!("{stem}_clean.ppm")))?,
                hazy: load_image(dir.join(format!("{stem}_hazy.ppm")))?,
                events: read_events(
                    dir.join(format!("{stem}_events.bin")),
                    EventFormat::Bin,
                    Some((size, size)),
                )?,
                tpr: TemporalPyramid {
                    levels: cfg.levels,
                    bins: cfg.bins,
                    grid,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((cfg, pairs))
}
