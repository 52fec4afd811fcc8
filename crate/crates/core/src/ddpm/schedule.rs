use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
const BETA_MIN: f64 = 1e-8;
const BETA_MAX: f64 = 0.999;

/// Variance schedule indexed by diffusion step `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Squared-cosine schedule with offset 0.008.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(Error::Config("diffusion steps must be at least 1".into()));
        }
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
            (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let beta: Vec<f64> = (1..=steps)
            .map(|t| (1.0 - f(t) / f(t - 1)).clamp(BETA_MIN, BETA_MAX))
            .collect();
        Ok(Self::from_betas(beta))
    }

    pub fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Self {
            beta,
            alpha,
            alpha_bar,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.steps() {
            return Err(Error::DiffusionStep {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar(0) = 1` by convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Posterior variance `beta_t (1 - alpha_bar(t-1)) / (1 - alpha_bar(t))`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let denom = 1.0 - self.alpha_bar(t);
        if denom == 0.0 {
            return 0.0;
        }
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / denom
    }
}

/// `sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * noise`, elementwise.
pub fn forward_sample(
    schedule: &DiffusionSchedule,
    x0: &[f64],
    t: usize,
    noise: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    shape_check("noise", x0.len(), noise.len())?;
    Ok(marginal(schedule.alpha_bar(t), x0, noise))
}

pub(crate) fn marginal(alpha_bar: f64, x0: &[f64], noise: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect()
}

/// Classifier-free combination `uncond + omega * (cond - uncond)`.
pub fn combine_guidance(uncond: &[f64], cond: &[f64], omega: f64) -> Vec<f64> {
    uncond
        .iter()
        .zip(cond)
        .map(|(u, c)| u + omega * (c - u))
        .collect()
}

/// Reverse mean of a single step.
pub fn reverse_mean(schedule: &DiffusionSchedule, x: &[f64], t: usize, eps_hat: &[f64]) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    shape_check("noise estimate", x.len(), eps_hat.len())?;
    let alpha = schedule.alpha(t);
    let spread = (1.0 - schedule.alpha_bar(t)).sqrt();
    let coef = if spread == 0.0 { 0.0 } else { (1.0 - alpha) / spread };
    let inv = 1.0 / alpha.sqrt();
    Ok(x.iter()
        .zip(eps_hat)
        .map(|(xi, e)| inv * (xi - coef * e))
        .collect())
}

/// Reverse mean through the implied clean sample, clamped to `[-clip, clip]`.
/// Equals [`reverse_mean`] whenever the clamp is inactive.
pub fn reverse_mean_clipped(
    schedule: &DiffusionSchedule,
    x: &[f64],
    t: usize,
    eps_hat: &[f64],
    clip: f64,
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    shape_check("noise estimate", x.len(), eps_hat.len())?;
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let denom = 1.0 - ab;
    if denom == 0.0 {
        return reverse_mean(schedule, x, t, eps_hat);
    }
    let c0 = schedule.beta(t) * ab_prev.sqrt() / denom;
    let ct = (1.0 - ab_prev) * schedule.alpha(t).sqrt() / denom;
    let (sa, sb) = (ab.sqrt(), denom.sqrt());
    Ok(x.iter()
        .zip(eps_hat)
        .map(|(xi, e)| {
            let x0 = ((xi - sb * e) / sa).clamp(-clip, clip);
            c0 * x0 + ct * xi
        })
        .collect())
}

/// One reverse step: the mean plus `sigma_t * noise`, with no noise at `t = 1`.
pub fn denoise_step(
    schedule: &DiffusionSchedule,
    x: &[f64],
    t: usize,
    eps_hat: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let sigma = if t > 1 {
        schedule.posterior_variance(t).sqrt()
    } else {
        0.0
    };
    denoise_step_with_sigma(schedule, x, t, eps_hat, noise, sigma)
}

pub fn denoise_step_with_sigma(
    schedule: &DiffusionSchedule,
    x: &[f64],
    t: usize,
    eps_hat: &[f64],
    noise: &[f64],
    sigma: f64,
) -> Result<Vec<f64>> {
    let mut mean = reverse_mean(schedule, x, t, eps_hat)?;
    if sigma != 0.0 {
        shape_check("noise", x.len(), noise.len())?;
        for (m, n) in mean.iter_mut().zip(noise) {
            *m += sigma * n;
        }
    }
    Ok(mean)
}

fn shape_check(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Shape {
            what,
            expected,
            found,
        });
    }
    Ok(())
}
