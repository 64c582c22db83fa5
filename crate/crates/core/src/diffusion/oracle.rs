//! Closed-form optimal noise predictor for Gaussian data `x0 ~ N(mu, sigma2 I)`.
//!
//! With `x_t = sqrt(ab) x0 + sqrt(1 - ab) eps`:
//!
//! ```text
//! E[x0 | x_t]  = mu + sqrt(ab) sigma2 / (ab sigma2 + 1 - ab) * (x_t - sqrt(ab) mu)
//! eps_hat      = (x_t - sqrt(ab) E[x0 | x_t]) / sqrt(1 - ab)
//! ```

use super::sampler::Denoiser;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracle {
    pub mu: f64,
    pub sigma2: f64,
    sched: NoiseSchedule,
}

impl GaussianOracle {
    pub fn new(mu: f64, sigma2: f64, sched: NoiseSchedule) -> Result<Self> {
        if !(sigma2 >= 0.0) || !mu.is_finite() {
            return Err(Error::domain(format!(
                "need finite mu and sigma2 >= 0, got {mu} / {sigma2}"
            )));
        }
        Ok(Self { mu, sigma2, sched })
    }

    pub fn posterior_mean(&self, x_t: f64, t: usize) -> f64 {
        let ab = self.sched.alpha_bar(t);
        let gain = ab.sqrt() * self.sigma2 / (ab * self.sigma2 + 1.0 - ab);
        self.mu + gain * (x_t - ab.sqrt() * self.mu)
    }

    pub fn eps_hat(&self, x_t: f64, t: usize) -> f64 {
        let ab = self.sched.alpha_bar(t);
        (x_t - ab.sqrt() * self.posterior_mean(x_t, t)) / (1.0 - ab).sqrt()
    }
}

impl Denoiser for GaussianOracle {
    fn predict_eps(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        self.sched.check_step(t)?;
        Ok(x_t.map(|x| self.eps_hat(x as f64, t) as f32))
    }
}
