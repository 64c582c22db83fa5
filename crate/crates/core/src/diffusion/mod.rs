//! Noise schedules, the forward process, the noise-prediction objective, and
//! reverse samplers.

mod oracle;
mod sampler;
mod schedule;

pub use oracle::GaussianOracle;
pub use sampler::{
    ddim_sample, ddim_sigma, ddim_step, ddpm_sample, ddpm_step, predict_x0, sample_chains, Denoiser, SamplerKind,
};
pub use schedule::{q_sample, NoiseSchedule, ScheduleKind};

use crate::error::Result;
use crate::rng::{gaussian_sample, Rng};
use crate::tensor::Tensor;

/// One draw of the noise-prediction loss `mean((eps - eps_hat(x_t, t))^2)`.
///
/// Draw order from `rng`: first `t = 1 + below(T)`, then `eps` with the dims
/// of `x0`.
pub fn simple_loss<D: Denoiser + ?Sized>(
    denoiser: &D,
    x0: &Tensor,
    rng: &mut Rng,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let t = 1 + rng.below(sched.steps());
    let eps = gaussian_sample(rng, x0.dims())?;
    let x_t = q_sample(x0, t, &eps, sched)?;
    let eps_hat = denoiser.predict_eps(&x_t, t)?;
    let diff = eps.zip_map(&eps_hat, |a, b| a - b)?;
    Ok(diff.data().iter().map(|&d| (d as f64) * (d as f64)).sum::<f64>() / diff.len() as f64)
}
