//! Ancestral (DDPM) and implicit (DDIM) reverse samplers.
//!
//! Both work on a descending sub-schedule `t_k > t_{k+1} > ... > 1` and treat
//! the step after `1` as `0` with `alpha_bar(0) = 1`.

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::exec::{map_indices, ExecMode};
use crate::rng::{gaussian_sample, Rng};
use crate::tensor::Tensor;

/// An epsilon-predictor. Conditioning inputs are captured by the implementor.
pub trait Denoiser {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor>;

    /// Range of valid clean samples. When set, the samplers clamp `x0_hat`
    /// into it and re-derive the noise estimate from the clamped value.
    fn x0_bounds(&self) -> Option<(f32, f32)> {
        None
    }
}

impl<F> Denoiser for F
where
    F: Fn(&Tensor, usize) -> Result<Tensor>,
{
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        self(x_t, t)
    }
}

fn checked_eps<D: Denoiser + ?Sized>(d: &D, x_t: &Tensor, t: usize) -> Result<Tensor> {
    let eps = d.predict_eps(x_t, t)?;
    if eps.dims() != x_t.dims() {
        return Err(Error::shape(format!(
            "denoiser returned {:?} for input {:?}",
            eps.dims(),
            x_t.dims()
        )));
    }
    Ok(eps)
}

/// `(x0_hat, eps)` at step `t`, with the denoiser's bounds applied.
fn estimate<D: Denoiser + ?Sized>(d: &D, x_t: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<(Tensor, Tensor)> {
    let eps = checked_eps(d, x_t, t)?;
    let x0 = predict_x0(x_t, &eps, t, sched)?;
    let Some((lo, hi)) = d.x0_bounds() else {
        return Ok((x0, eps));
    };
    let x0 = x0.map(|v| v.clamp(lo, hi));
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps = x_t.zip_map(&x0, |x, x0| ((x as f64 - a * x0 as f64) / b) as f32)?;
    Ok((x0, eps))
}

/// `x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`
pub fn predict_x0(x_t: &Tensor, eps: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps, |x, e| ((x as f64 - b * e as f64) / a) as f32)
}

/// DDIM noise scale for `t -> t_prev` at stochasticity `eta`
/// (`eta = 1` reproduces the ancestral posterior variance).
pub fn ddim_sigma(sched: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
    eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
}

/// One implicit update:
/// `x_prev = sqrt(abar_prev) x0_hat + sqrt(1 - abar_prev - sigma^2) eps + sigma z`.
/// `z` may be omitted when `sigma == 0`.
pub fn ddim_step<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    sigma: f64,
    z: Option<&Tensor>,
) -> Result<Tensor> {
    sched.check_step(t)?;
    if t_prev >= t {
        return Err(Error::domain(format!("t_prev {t_prev} must precede t {t}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::domain(format!("sigma must be non-negative, got {sigma}")));
    }
    let ab_prev = sched.alpha_bar(t_prev);
    let carry2 = 1.0 - ab_prev - sigma * sigma;
    // Rounding slack so that sigma^2 == 1 - abar_prev computed elsewhere passes.
    if carry2 < -1e-12 {
        return Err(Error::domain(format!(
            "sigma^2 = {} exceeds 1 - abar_prev = {}",
            sigma * sigma,
            1.0 - ab_prev
        )));
    }
    let carry = carry2.max(0.0).sqrt();
    let (x0, eps) = estimate(denoiser, x_t, t, sched)?;
    let mut out = x0.zip_map(&eps, |x0, e| (ab_prev.sqrt() * x0 as f64 + carry * e as f64) as f32)?;
    if sigma > 0.0 {
        let z = z.ok_or_else(|| Error::domain("sigma > 0 needs a noise tensor"))?;
        out = out.zip_map(z, |x, z| (x as f64 + sigma * z as f64) as f32)?;
    }
    Ok(out)
}

/// Deterministic when `eta == 0`; `rng` is only drawn from when `eta > 0`.
pub fn ddim_sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_t: &Tensor,
    sched: &NoiseSchedule,
    steps: usize,
    eta: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    let ts = sched.timesteps(steps)?;
    let mut x = x_t.clone();
    for (k, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(k + 1).copied().unwrap_or(0);
        let sigma = ddim_sigma(sched, t, t_prev, eta);
        let z = if sigma > 0.0 {
            Some(gaussian_sample(rng, x.dims())?)
        } else {
            None
        };
        x = ddim_step(denoiser, &x, t, t_prev, sched, sigma, z.as_ref())?;
    }
    Ok(x)
}

/// One ancestral update `t -> t_prev` using the posterior of the (possibly
/// strided) step: mean from `x0_hat` and `x_t`, variance
/// `(1 - abar_prev) / (1 - abar_t) * (1 - abar_t / abar_prev)`.
pub fn ddpm_step<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    z: Option<&Tensor>,
) -> Result<Tensor> {
    sched.check_step(t)?;
    if t_prev >= t {
        return Err(Error::domain(format!("t_prev {t_prev} must precede t {t}")));
    }
    let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
    let alpha = ab / ab_prev;
    let beta = 1.0 - alpha;
    let (x0, _) = estimate(denoiser, x_t, t, sched)?;
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let mean = x0.zip_map(x_t, |x0, xt| (c0 * x0 as f64 + ct * xt as f64) as f32)?;
    if t_prev == 0 {
        return Ok(mean);
    }
    let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
    let z = z.ok_or_else(|| Error::domain("ancestral step needs a noise tensor"))?;
    let sd = var.sqrt();
    mean.zip_map(z, |m, z| (m as f64 + sd * z as f64) as f32)
}

/// Ancestral sampling over `steps` evenly strided steps; the final step adds
/// no noise.
pub fn ddpm_sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    x_t: &Tensor,
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    if steps > sched.steps() {
        return Err(Error::domain(format!("{steps} steps exceed T = {}", sched.steps())));
    }
    let ts = sched.timesteps(steps)?;
    let mut x = x_t.clone();
    for (k, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(k + 1).copied().unwrap_or(0);
        let z = if t_prev > 0 {
            Some(gaussian_sample(rng, x.dims())?)
        } else {
            None
        };
        x = ddpm_step(denoiser, &x, t, t_prev, sched, z.as_ref())?;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    Ddpm { steps: usize },
    Ddim { steps: usize, eta: f64 },
}

impl SamplerKind {
    pub fn steps(&self) -> usize {
        match *self {
            SamplerKind::Ddpm { steps } | SamplerKind::Ddim { steps, .. } => steps,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            SamplerKind::Ddpm { steps } => format!("ddpm-{steps}"),
            SamplerKind::Ddim { steps, eta: 0.0 } => format!("ddim-{steps}"),
            SamplerKind::Ddim { steps, eta } => format!("ddim-{steps}-eta{eta}"),
        }
    }

    /// Inverse of [`label`](Self::label): `ddpm-N`, `ddim-N` or `ddim-N-etaE`.
    pub fn parse_label(s: &str) -> Result<Self> {
        let bad = || Error::domain(format!("bad sampler {s:?}, expected ddpm-N, ddim-N or ddim-N-etaE"));
        let (kind, rest) = s.split_once('-').ok_or_else(bad)?;
        let (steps, eta) = match rest.split_once("-eta") {
            Some((n, e)) => (n, Some(e.parse::<f64>().map_err(|_| bad())?)),
            None => (rest, None),
        };
        let steps: usize = steps.parse().map_err(|_| bad())?;
        match (kind, eta) {
            ("ddpm", None) => Ok(SamplerKind::Ddpm { steps }),
            ("ddim", eta) => Ok(SamplerKind::Ddim {
                steps,
                eta: eta.unwrap_or(0.0),
            }),
            _ => Err(bad()),
        }
    }

    pub fn run<D: Denoiser + ?Sized>(
        &self,
        denoiser: &D,
        x_t: &Tensor,
        sched: &NoiseSchedule,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        match *self {
            SamplerKind::Ddpm { steps } => ddpm_sample(denoiser, x_t, sched, steps, rng),
            SamplerKind::Ddim { steps, eta } => ddim_sample(denoiser, x_t, sched, steps, eta, rng),
        }
    }
}

/// Run `n` independent chains from pure noise. Chain `i` draws its start and
/// sampling noise from `Rng::stream(seed, i)`, so the result is the same in
/// either execution mode.
pub fn sample_chains<D: Denoiser + Sync + ?Sized>(
    denoiser: &D,
    sampler: SamplerKind,
    sched: &NoiseSchedule,
    dims: &[usize],
    n: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<Tensor>> {
    map_indices(n, mode, |i| {
        let mut rng = Rng::stream(seed, i as u64);
        let x_t = gaussian_sample(&mut rng, dims)?;
        sampler.run(denoiser, &x_t, sched, &mut rng)
    })
    .into_iter()
    .collect()
}
