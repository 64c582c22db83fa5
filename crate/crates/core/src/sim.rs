//! Frame rendering under synthetic camera motion and conversion of frame
//! sequences to events by log-intensity threshold crossing.
//!
//! Camera motion is a 2-D similarity per sample: translation covers the
//! vertical/horizontal motions, scale the forward-backward motion, and `rot`
//! an in-plane rotation about the image center.

use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::exec::{map_indices, ExecMode};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub t: u64,
    pub dx: f64,
    pub dy: f64,
    pub rot: f64,
    pub scale: f64,
}

impl MotionSample {
    pub fn identity(t: u64) -> Self {
        Self {
            t,
            dx: 0.0,
            dy: 0.0,
            rot: 0.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionTrajectory {
    samples: Vec<MotionSample>,
}

impl MotionTrajectory {
    pub fn new(samples: Vec<MotionSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("empty trajectory"));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.scale > 0.0) || !s.scale.is_finite() {
                return Err(Error::Record {
                    record: i + 1,
                    msg: format!("degenerate scale {}", s.scale),
                });
            }
            if ![s.dx, s.dy, s.rot].iter().all(|v| v.is_finite()) {
                return Err(Error::Record {
                    record: i + 1,
                    msg: "non-finite motion parameter".into(),
                });
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(Error::Record {
                    record: i + 1,
                    msg: format!("timestamp {} not after {}", s.t, samples[i - 1].t),
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[MotionSample] {
        &self.samples
    }

    /// Insert `substeps - 1` linearly interpolated samples between each pair.
    pub fn densify(&self, substeps: usize) -> Result<Self> {
        if substeps <= 1 {
            return Ok(self.clone());
        }
        let mut out = Vec::with_capacity(self.samples.len() * substeps);
        for w in self.samples.windows(2) {
            let (a, b) = (w[0], w[1]);
            for k in 0..substeps {
                let f = k as f64 / substeps as f64;
                let t = a.t + ((b.t - a.t) as f64 * f).round() as u64;
                if out.last().is_some_and(|p: &MotionSample| p.t >= t) {
                    continue;
                }
                out.push(MotionSample {
                    t,
                    dx: a.dx + f * (b.dx - a.dx),
                    dy: a.dy + f * (b.dy - a.dy),
                    rot: a.rot + f * (b.rot - a.rot),
                    scale: a.scale + f * (b.scale - a.scale),
                });
            }
        }
        out.push(*self.samples.last().unwrap());
        Self::new(out)
    }

    /// Parse header-free `t_us,dx,dy,rot,scale` lines.
    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(perr(format!("expected 5 fields t,dx,dy,rot,scale, found {}", f.len())));
            }
            let t = f[0].parse().map_err(|_| perr(format!("bad timestamp {:?}", f[0])))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("bad number {s:?}")));
            samples.push(MotionSample {
                t,
                dx: num(f[1])?,
                dy: num(f[2])?,
                rot: num(f[3])?,
                scale: num(f[4])?,
            });
        }
        Self::new(samples)
    }
}

/// Sample `plane` (h x w) at fractional coordinates, replicating edges.
fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let p = |yy: usize, xx: usize| plane[yy * w + xx];
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Warp `img` by one motion sample. Output pixel `q` takes the source value
/// at `c + R(-rot) (q - c - d) / scale`, where `c` is the image center.
pub fn warp_image(img: &Image, s: &MotionSample) -> Result<Image> {
    if !(s.scale > 0.0) {
        return Err(Error::domain(format!("degenerate scale {}", s.scale)));
    }
    let (h, w) = (img.height(), img.width());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin, cos) = s.rot.sin_cos();
    Image::from_fn(h, w, img.channels(), |c, y, x| {
        let qx = x as f64 - cx - s.dx;
        let qy = y as f64 - cy - s.dy;
        let sx = cx + (cos * qx + sin * qy) / s.scale;
        let sy = cy + (-sin * qx + cos * qy) / s.scale;
        bilinear(img.plane(c), h, w, sy, sx).clamp(0.0, 1.0)
    })
}

/// One warped frame per trajectory sample.
pub fn render_trajectory(img: &Image, traj: &MotionTrajectory) -> Result<Vec<(u64, Image)>> {
    traj.samples().iter().map(|s| Ok((s.t, warp_image(img, s)?))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Positive contrast threshold, log-intensity units.
    pub c_pos: f64,
    pub c_neg: f64,
    /// Per-pixel dead time in microseconds.
    pub refractory: u64,
    pub log_eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            c_pos: 0.2,
            c_neg: 0.2,
            refractory: 0,
            log_eps: 1e-3,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c_pos > 0.0 && self.c_neg > 0.0) {
            return Err(Error::domain(format!(
                "contrast thresholds must be positive, got {} / {}",
                self.c_pos, self.c_neg
            )));
        }
        if !(self.log_eps > 0.0) {
            return Err(Error::domain("log_eps must be positive"));
        }
        Ok(())
    }

    pub fn log_intensity(&self, v: f32) -> f64 {
        (v as f64).max(self.log_eps).ln()
    }
}

/// Threshold-crossing state of a single pixel.
#[derive(Debug, Clone)]
pub struct PixelSim {
    reference: f64,
    last_event: Option<u64>,
}

impl PixelSim {
    pub fn new(initial_log: f64) -> Self {
        Self {
            reference: initial_log,
            last_event: None,
        }
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    /// Advance across one interval where log intensity moves linearly from
    /// `la` at `ta` to `lb` at `tb`. Emits `(timestamp, polarity)` pairs. A
    /// crossing inside the refractory period still moves the reference level
    /// but produces no event.
    pub fn step(&mut self, ta: u64, la: f64, tb: u64, lb: f64, cfg: &SimConfig, mut emit: impl FnMut(u64, i8)) {
        let slope_dt = (tb - ta) as f64;
        let delta = lb - la;
        let mut fire = |this: &mut Self, level: f64, p: i8| {
            let frac = ((level - la) / delta).clamp(0.0, 1.0);
            let t = ta + (frac * slope_dt).round() as u64;
            let allowed = this
                .last_event
                .is_none_or(|last| t.saturating_sub(last) >= cfg.refractory);
            if allowed {
                this.last_event = Some(t);
                emit(t, p);
            }
        };
        if delta > 0.0 {
            while lb >= self.reference + cfg.c_pos {
                self.reference += cfg.c_pos;
                let level = self.reference;
                fire(self, level, 1);
            }
        } else if delta < 0.0 {
            while lb <= self.reference - cfg.c_neg {
                self.reference -= cfg.c_neg;
                let level = self.reference;
                fire(self, level, -1);
            }
        }
    }
}

/// Convert a grayscale frame sequence to events. The result is sorted by
/// `(t, y, x)`; events of one pixel at equal timestamps keep emission order.
pub fn simulate_events(frames: &[(u64, Image)], cfg: &SimConfig) -> Result<EventStream> {
    simulate_events_with(frames, cfg, ExecMode::default())
}

pub fn simulate_events_with(frames: &[(u64, Image)], cfg: &SimConfig, mode: ExecMode) -> Result<EventStream> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::domain(format!("need at least 2 frames, got {}", frames.len())));
    }
    let (h, w) = (frames[0].1.height(), frames[0].1.width());
    for (i, (t, f)) in frames.iter().enumerate() {
        if f.channels() != 1 {
            return Err(Error::domain(format!(
                "frame {} has {} channels; convert to luminance first",
                i + 1,
                f.channels()
            )));
        }
        if f.height() != h || f.width() != w {
            return Err(Error::shape(format!("frame {} extents differ from frame 1", i + 1)));
        }
        if i > 0 && *t <= frames[i - 1].0 {
            return Err(Error::Record {
                record: i + 1,
                msg: format!("frame timestamp {t} not after {}", frames[i - 1].0),
            });
        }
    }
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::InvalidDimension(format!("{w}x{h} exceeds the u16 sensor limit")));
    }

    let rows = map_indices(h, mode, |y| {
        let mut out = Vec::new();
        for x in 0..w {
            let idx = y * w + x;
            let log_at = |k: usize| cfg.log_intensity(frames[k].1.values()[idx]);
            let mut px = PixelSim::new(log_at(0));
            for k in 1..frames.len() {
                px.step(frames[k - 1].0, log_at(k - 1), frames[k].0, log_at(k), cfg, |t, p| {
                    out.push(Event::new(t, x as u16, y as u16, p))
                });
            }
        }
        out
    });
    let mut events: Vec<Event> = rows.into_iter().flatten().collect();
    events.sort_by_key(|e| (e.t, e.y, e.x));
    EventStream::new(w as u16, h as u16, events)
}
