//! Variance-preserving DDPM machinery over action vectors.
//!
//! Steps are indexed 1..=K. The per-step retention follows an exponential
//! schedule
//!
//! ```text
//! alpha_k = exp(-beta_min/K - (beta_max - beta_min) * (2k - 1) / (2 K^2))
//! ```
//!
//! with `beta_k = 1 - alpha_k`, cumulative `alpha_bar_k = prod alpha_i`, and
//! posterior noise scale `sigma_k^2 = beta_k (1 - alpha_bar_{k-1}) / (1 -
//! alpha_bar_k)` using the convention `alpha_bar_0 = 1` (so `sigma_1 = 0`:
//! the final denoising step is deterministic).

use crate::error::{Error, Result};
use crate::tensor::Tensor2;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    num_steps: usize,
    beta_min: f64,
    beta_max: f64,
    /// alpha[k-1] holds alpha_k, k = 1..=K.
    alpha: Vec<f64>,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

pub fn build_schedule(num_steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(Error::config("diffusion needs at least one step"));
    }
    if !(beta_min > 0.0) || !(beta_max > beta_min) {
        return Err(Error::config(format!(
            "schedule needs 0 < beta_min < beta_max, got {beta_min}, {beta_max}"
        )));
    }
    let kf = num_steps as f64;
    let mut alpha = Vec::with_capacity(num_steps);
    let mut beta = Vec::with_capacity(num_steps);
    let mut alpha_bar = Vec::with_capacity(num_steps);
    let mut sigma = Vec::with_capacity(num_steps);
    let mut prod = 1.0;
    for k in 1..=num_steps {
        let a = (-beta_min / kf
            - (beta_max - beta_min) * (2.0 * k as f64 - 1.0) / (2.0 * kf * kf))
            .exp();
        let prev_bar = prod;
        prod *= a;
        alpha.push(a);
        beta.push(1.0 - a);
        alpha_bar.push(prod);
        // sigma_k^2 = beta_k * (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k),
        // alpha_bar_0 = 1 makes sigma_1 exactly 0.
        sigma.push(((1.0 - a) * (1.0 - prev_bar) / (1.0 - prod)).sqrt());
    }
    Ok(NoiseSchedule {
        num_steps,
        beta_min,
        beta_max,
        alpha,
        beta,
        alpha_bar,
        sigma,
    })
}

impl NoiseSchedule {
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.num_steps {
            return Err(Error::argument(format!(
                "diffusion step {k} outside 1..={}",
                self.num_steps
            )));
        }
        Ok(())
    }

    pub fn alpha(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(self.alpha[k - 1])
    }

    pub fn beta(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(self.beta[k - 1])
    }

    pub fn alpha_bar(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(self.alpha_bar[k - 1])
    }

    pub fn sigma(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        Ok(self.sigma[k - 1])
    }

    /// Terminal signal-to-noise: alpha_bar_K. Should be near zero so the
    /// forward process ends close to a standard normal.
    pub fn final_alpha_bar(&self) -> f64 {
        *self.alpha_bar.last().expect("at least one step")
    }
}

/// Diffuse clean actions to step `k`: `a_k = sqrt(alpha_bar_k) a0 +
/// sqrt(1 - alpha_bar_k) eps`. `eps` must match `a0`'s shape.
pub fn forward_noise(
    schedule: &NoiseSchedule,
    a0: &Tensor2,
    eps: &Tensor2,
    k: usize,
) -> Result<Tensor2> {
    if a0.shape() != eps.shape() {
        return Err(Error::shape(format!(
            "forward_noise: a0 {:?} vs eps {:?}",
            a0.shape(),
            eps.shape()
        )));
    }
    let ab = schedule.alpha_bar(k)?;
    let mut out = a0.scaled(ab.sqrt());
    out.scaled_add((1.0 - ab).sqrt(), eps);
    Ok(out)
}

/// Posterior mean of the reverse kernel given the predicted noise:
/// `mu = (a_k - (1 - alpha_k)/sqrt(1 - alpha_bar_k) * eps_hat) / sqrt(alpha_k)`.
pub fn reverse_mean(
    schedule: &NoiseSchedule,
    a_k: &Tensor2,
    eps_hat: &Tensor2,
    k: usize,
) -> Result<Tensor2> {
    if a_k.shape() != eps_hat.shape() {
        return Err(Error::shape(format!(
            "reverse_mean: a_k {:?} vs eps_hat {:?}",
            a_k.shape(),
            eps_hat.shape()
        )));
    }
    let a = schedule.alpha(k)?;
    let ab = schedule.alpha_bar(k)?;
    let mut out = a_k.clone();
    out.scaled_add(-(1.0 - a) / (1.0 - ab).sqrt(), eps_hat);
    out.scale(1.0 / a.sqrt());
    Ok(out)
}

/// One reverse step: `a_{k-1} = mu + sigma_k * noise`. At k=1 the noise
/// term vanishes identically.
pub fn reverse_step(
    schedule: &NoiseSchedule,
    a_k: &Tensor2,
    eps_hat: &Tensor2,
    noise: &Tensor2,
    k: usize,
) -> Result<Tensor2> {
    if noise.shape() != a_k.shape() {
        return Err(Error::shape(format!(
            "reverse_step: noise {:?} vs a_k {:?}",
            noise.shape(),
            a_k.shape()
        )));
    }
    let mut out = reverse_mean(schedule, a_k, eps_hat, k)?;
    out.scaled_add(schedule.sigma(k)?, noise);
    Ok(out)
}

/// Mean squared noise-prediction residual over all matrix entries, plus its
/// gradient with respect to the prediction: `d/d eps_pred = 2 (eps_pred -
/// eps_true) / N`.
pub fn ddpm_residual(eps_pred: &Tensor2, eps_true: &Tensor2) -> Result<(f64, Tensor2)> {
    if eps_pred.shape() != eps_true.shape() {
        return Err(Error::shape(format!(
            "ddpm_residual: pred {:?} vs true {:?}",
            eps_pred.shape(),
            eps_true.shape()
        )));
    }
    if eps_pred.len() == 0 {
        return Err(Error::EmptyInput("ddpm_residual on empty tensors".into()));
    }
    let n = eps_pred.len() as f64;
    let diff = eps_pred.sub(eps_true);
    let loss = diff.squared_sum() / n;
    let grad = diff.scaled(2.0 / n);
    Ok((loss, grad))
}

/// Fill a tensor with standard normal draws in row-major order.
pub fn standard_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("normal buffer sized correctly")
}
