//! DDPM machinery: the beta/alpha/alpha_bar schedule, closed-form forward
//! corruption x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps, the deterministic
//! reverse-mean construction of X_{t-1}, the sampling loop, and the
//! phase-1/phase-2 training objectives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::{freq_loss, FreqLossConfig};
use crate::rng::{normal_vec, stream, Stream};
use crate::tensor::{Scalar, Tape, Tensor};
use crate::unet::DenoiserNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// beta_t, alpha_t = 1 - beta_t and alpha_bar_t = prod_{s<=t} alpha_s,
/// indexed by t in [1, T].
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t < 1 || t > self.len() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.len(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check_t(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.check_t(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.check_t(t)?])
    }
}

/// Build a schedule with T steps. Linear interpolates beta from
/// beta_start to beta_end; cosine uses the squared-cosine alpha_bar curve
/// (beta_start/beta_end only clip the per-step betas there).
pub fn make_schedule(
    t_count: usize,
    beta_start: f64,
    beta_end: f64,
    kind: ScheduleKind,
) -> Result<NoiseSchedule> {
    if t_count == 0 {
        return Err(Error::Contract {
            op: "make_schedule",
            msg: "T must be positive".into(),
        });
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Contract {
            op: "make_schedule",
            msg: format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"),
        });
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..t_count)
            .map(|i| {
                if t_count == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_count - 1) as f64
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: f64| ((t / t_count as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2);
            (0..t_count)
                .map(|i| {
                    let b = 1.0 - f((i + 1) as f64) / f(i as f64);
                    b.clamp(beta_start, 0.999)
                })
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_count);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

/// Closed-form forward corruption at step t.
pub fn q_sample<T: Scalar>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    let ab = sched.alpha_bar(t)?;
    x0.mul_scalar(T::fl(ab.sqrt()))
        .add(&eps.mul_scalar(T::fl((1.0 - ab).sqrt())))
}

/// Deterministic posterior-mean construction:
/// X_{t-1} = (X_t - (1-alpha_t)/sqrt(1-alpha_bar_t) * eps_hat) / sqrt(alpha_t).
/// Differentiable with respect to eps_hat; used both as the frequency-
/// perception image and as the mean inside sampling.
pub fn reverse_mean_step<T: Scalar>(
    x_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    if x_t.shape() != eps_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "reverse_mean_step",
            lhs: x_t.shape().to_vec(),
            rhs: eps_hat.shape().to_vec(),
        });
    }
    let alpha = sched.alpha(t)?;
    let ab = sched.alpha_bar(t)?;
    let coef = if ab >= 1.0 {
        0.0 // degenerate alpha = 1 step carries no noise
    } else {
        (1.0 - alpha) / (1.0 - ab).sqrt()
    };
    Ok(x_t
        .sub(&eps_hat.mul_scalar(T::fl(coef)))?
        .mul_scalar(T::fl(1.0 / alpha.sqrt())))
}

/// Full reverse loop t = T..1 from Gaussian noise, conditioned on the
/// low-light image y. Deterministic when `stochastic` is false; otherwise
/// adds sigma_t * z with sigma_t^2 = beta_t for t > 1. Output is clipped
/// to [-1, 1].
///
/// Each step evaluates the posterior mean in its x0-parameterised form,
/// mu = c0 * x0_hat + ct * x_t, clamping x0_hat to [-1, 1] first. Images
/// live in [-1, 1] by construction, so the clamp only discards estimates
/// that are certainly wrong; where it is inactive the update is
/// algebraically identical to [`reverse_mean_step`].
pub fn sample<T: Scalar>(
    net: &DenoiserNet<T>,
    y: &Tensor<T>,
    sched: &NoiseSchedule,
    seed: u64,
    stochastic: bool,
) -> Result<Tensor<T>> {
    let mut rng = stream(seed, Stream::Sample);
    let n = y.len();
    let mut x = Tensor::from_vec(normal_vec::<T>(&mut rng, n), y.shape());
    for t in (1..=sched.len()).rev() {
        let ab = sched.alpha_bar(t)?;
        let ab_prev = if t == 1 { 1.0 } else { sched.alpha_bar(t - 1)? };
        let alpha = sched.alpha(t)?;
        let beta = sched.beta(t)?;
        let (eps_hat, _) = net.forward(&x, y, ab, None)?;
        let x0_hat = x
            .sub(&eps_hat.mul_scalar(T::fl((1.0 - ab).sqrt())))?
            .mul_scalar(T::fl(1.0 / ab.sqrt()));
        let x0_clamped: Vec<T> = x0_hat
            .data()
            .iter()
            .map(|v| (*v).max(-T::one()).min(T::one()))
            .collect();
        let x0_clamped = Tensor::from_vec(x0_clamped, y.shape());
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        x = x0_clamped
            .mul_scalar(T::fl(c0))
            .add(&x.mul_scalar(T::fl(ct)))?;
        if stochastic && t > 1 {
            let sigma = beta.sqrt();
            let z = Tensor::from_vec(normal_vec::<T>(&mut rng, n), y.shape());
            x = x.add(&z.mul_scalar(T::fl(sigma)))?;
        }
    }
    let clipped: Vec<T> = x
        .data()
        .iter()
        .map(|v| (*v).max(-T::one()).min(T::one()))
        .collect();
    Ok(Tensor::from_vec(clipped, y.shape()))
}

/// Scalar diagnostics logged per training step.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: f64,
    pub noise: f64,
    pub freq: f64,
    pub t: usize,
}

fn draw_t(rng: &mut ChaCha8Rng, sched: &NoiseSchedule) -> usize {
    rng.gen_range(1..=sched.len())
}

/// Phase-1 heteroscedastic objective:
/// mean( exp(-u) * (eps - eps_hat)^2 + u ).
/// Pointwise minimum over u at u = log((eps - eps_hat)^2).
pub fn phase1_loss<T: Scalar>(
    net: &DenoiserNet<T>,
    x0: &Tensor<T>,
    y: &Tensor<T>,
    sched: &NoiseSchedule,
    noise_rng: &mut ChaCha8Rng,
    t_rng: &mut ChaCha8Rng,
    tape: &Tape<T>,
) -> Result<(Tensor<T>, LossParts)> {
    let t = draw_t(t_rng, sched);
    let eps = Tensor::from_vec(normal_vec::<T>(noise_rng, x0.len()), x0.shape());
    let x_t = q_sample(x0, t, &eps, sched)?;
    let (eps_hat, u) = net.forward(&x_t, y, sched.alpha_bar(t)?, Some(tape))?;
    let diff = eps.sub(&eps_hat)?;
    let sq = diff.mul(&diff)?;
    let weighted = u.neg().exp().mul(&sq)?.add(&u)?;
    let loss = weighted.mean_all();
    let parts = LossParts {
        total: loss.item().as_f64(),
        noise: loss.item().as_f64(),
        freq: 0.0,
        t,
    };
    Ok((loss, parts))
}

/// Phase-2 objective with the uncertainty head frozen: the u-weighted
/// noise term (u detached, acting as a fixed per-pixel weight) plus the
/// frequency-domain perception loss on the constructed X_{t-1}.
pub fn phase2_loss<T: Scalar>(
    net: &DenoiserNet<T>,
    x0: &Tensor<T>,
    y: &Tensor<T>,
    sched: &NoiseSchedule,
    freq_cfg: &FreqLossConfig,
    noise_rng: &mut ChaCha8Rng,
    t_rng: &mut ChaCha8Rng,
    tape: &Tape<T>,
) -> Result<(Tensor<T>, LossParts)> {
    if !net.uncertainty_frozen() {
        return Err(Error::Contract {
            op: "phase2_loss",
            msg: "uncertainty head must be frozen before phase 2".into(),
        });
    }
    let t = draw_t(t_rng, sched);
    let eps = Tensor::from_vec(normal_vec::<T>(noise_rng, x0.len()), x0.shape());
    let x_t = q_sample(x0, t, &eps, sched)?;
    let (eps_hat, u) = net.forward(&x_t, y, sched.alpha_bar(t)?, Some(tape))?;
    let diff = eps.sub(&eps_hat)?;
    let sq = diff.mul(&diff)?;
    let noise_term = u.detach().neg().exp().mul(&sq)?.mean_all();
    let x_prev = reverse_mean_step(&x_t.detach(), &eps_hat, t, sched)?;
    let f_term = freq_loss(&x_prev, x0, freq_cfg)?;
    let loss = noise_term.add(&f_term)?;
    let parts = LossParts {
        total: loss.item().as_f64(),
        noise: noise_term.item().as_f64(),
        freq: f_term.item().as_f64(),
        t,
    };
    Ok((loss, parts))
}
