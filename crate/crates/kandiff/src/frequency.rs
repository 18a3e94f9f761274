//! 2-D Fourier transform, amplitude/phase decomposition and the
//! frequency-domain perception loss
//! L_f = gamma1*||amp_low - amp_high||_1 + gamma2*||pha_low - pha_high||_1
//! (phase distance wrapped across the branch cut).

use std::sync::Arc;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::binary;
use crate::tensor::tape::record_op;
use crate::tensor::{Scalar, Tensor};

/// Unnormalized 1-D DFT in place: radix-2 iterative with bit reversal for
/// power-of-two lengths, direct O(n^2) transform otherwise.
fn fft_1d<T: Scalar>(buf: &mut [Complex<T>], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    if n.is_power_of_two() {
        // bit-reversal permutation
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
            let wlen = Complex::new(T::fl(ang.cos()), T::fl(ang.sin()));
            let mut i = 0;
            while i < n {
                let mut w = Complex::new(T::one(), T::zero());
                for j in 0..len / 2 {
                    let u = buf[i + j];
                    let v = buf[i + j + len / 2] * w;
                    buf[i + j] = u + v;
                    buf[i + j + len / 2] = u - v;
                    w = w * wlen;
                }
                i += len;
            }
            len <<= 1;
        }
    } else {
        let src = buf.to_vec();
        for (k, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (i, v) in src.iter().enumerate() {
                let ang = sign * 2.0 * std::f64::consts::PI * (k * i % n) as f64 / n as f64;
                acc = acc + *v * Complex::new(T::fl(ang.cos()), T::fl(ang.sin()));
            }
            *out = acc;
        }
    }
}

/// Unnormalized 2-D DFT of one plane, rows then columns.
fn fft_2d<T: Scalar>(data: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    for row in data.chunks_mut(w) {
        fft_1d(row, inverse);
    }
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        fft_1d(&mut col, inverse);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
}

fn plane_transform<T: Scalar>(re: &[T], im: &[T], h: usize, w: usize, inverse: bool) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = re
        .iter()
        .zip(im.iter())
        .map(|(r, i)| Complex::new(*r, *i))
        .collect();
    fft_2d(&mut buf, h, w, inverse);
    buf
}

/// Forward unnormalized DFT per channel of a real [C,H,W] tensor.
/// Returns (re, im) planes; the transform is linear, so gradients are the
/// adjoint (inverse-exponent) transform of the output gradients.
pub fn fft2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = match x.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::ShapeMismatch {
                op: "fft2",
                lhs: other.to_vec(),
                rhs: vec![],
            })
        }
    };
    if x.is_empty() {
        return Err(Error::Contract {
            op: "fft2",
            msg: "empty input".into(),
        });
    }
    let hw = h * w;
    let xd = x.data_arc();
    let zeros = vec![T::zero(); hw];
    let mut re = vec![T::zero(); c * hw];
    let mut im = vec![T::zero(); c * hw];
    for ch in 0..c {
        let buf = plane_transform(&xd[ch * hw..(ch + 1) * hw], &zeros, h, w, false);
        for (i, v) in buf.iter().enumerate() {
            re[ch * hw + i] = v.re;
            im[ch * hw + i] = v.im;
        }
    }
    let shape = vec![c, h, w];
    let re_t = record_op(&[x], Arc::new(re), shape.clone(), move |g, sink| {
        let mut gx = vec![T::zero(); c * hw];
        let zeros = vec![T::zero(); hw];
        for ch in 0..c {
            let buf = plane_transform(&g[ch * hw..(ch + 1) * hw], &zeros, h, w, true);
            for (i, v) in buf.iter().enumerate() {
                gx[ch * hw + i] = v.re;
            }
        }
        sink(0, gx);
    });
    let im_t = record_op(&[x], Arc::new(im), shape, move |g, sink| {
        let mut gx = vec![T::zero(); c * hw];
        let zeros = vec![T::zero(); hw];
        for ch in 0..c {
            let buf = plane_transform(&zeros, &g[ch * hw..(ch + 1) * hw], h, w, true);
            for (i, v) in buf.iter().enumerate() {
                gx[ch * hw + i] = v.re;
            }
        }
        sink(0, gx);
    });
    Ok((re_t, im_t))
}

/// Normalized inverse DFT (untracked); round-trip partner of [`fft2`].
pub fn ifft2<T: Scalar>(re: &Tensor<T>, im: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = match re.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::ShapeMismatch {
                op: "ifft2",
                lhs: other.to_vec(),
                rhs: vec![],
            })
        }
    };
    if re.shape() != im.shape() {
        return Err(Error::ShapeMismatch {
            op: "ifft2",
            lhs: re.shape().to_vec(),
            rhs: im.shape().to_vec(),
        });
    }
    let hw = h * w;
    let scale = T::fl(1.0 / hw as f64);
    let mut ore = vec![T::zero(); c * hw];
    let mut oim = vec![T::zero(); c * hw];
    for ch in 0..c {
        let buf = plane_transform(
            &re.data()[ch * hw..(ch + 1) * hw],
            &im.data()[ch * hw..(ch + 1) * hw],
            h,
            w,
            true,
        );
        for (i, v) in buf.iter().enumerate() {
            ore[ch * hw + i] = v.re * scale;
            oim[ch * hw + i] = v.im * scale;
        }
    }
    Ok((
        Tensor::from_vec(ore, re.shape()),
        Tensor::from_vec(oim, re.shape()),
    ))
}

/// Amplitude and phase planes of a 2-D spectrum.
pub struct Spectrum<T: Scalar> {
    /// sqrt(re^2 + im^2), non-negative everywhere.
    pub amp: Tensor<T>,
    /// atan2(im, re) in (-pi, pi].
    pub pha: Tensor<T>,
}

/// Polar decomposition of the per-channel 2-D DFT. Gradients through the
/// phase are masked where the magnitude vanishes (phase undefined there).
pub fn spectrum<T: Scalar>(x: &Tensor<T>) -> Result<Spectrum<T>> {
    let (re, im) = fft2(x)?;
    let amp = binary(
        "hypot",
        &re,
        &im,
        |a, b| (a * a + b * b).sqrt(),
        |a, b| {
            let hv = (a * a + b * b).sqrt();
            if hv < T::fl(1e-8) {
                (T::zero(), T::zero())
            } else {
                (a / hv, b / hv)
            }
        },
    )?;
    let pha = binary(
        "atan2",
        &im,
        &re,
        |y, x| y.atan2(x),
        |y, x| {
            let r2 = x * x + y * y;
            if r2 < T::fl(1e-16) {
                (T::zero(), T::zero())
            } else {
                (x / r2, -y / r2)
            }
        },
    )?;
    Ok(Spectrum { amp, pha })
}

/// Wrapped phase distance min(|d|, 2*pi - |d|) so that angles differing by
/// a full turn are identical.
pub fn phase_dist<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(
        "phase_dist",
        a,
        b,
        |x, y| {
            let tau = T::fl(2.0 * std::f64::consts::PI);
            let d = (x - y).abs() % tau;
            d.min(tau - d)
        },
        |x, y| {
            let tau = T::fl(2.0 * std::f64::consts::PI);
            let pi = T::fl(std::f64::consts::PI);
            // reduce x - y into [0, tau); distance rises until pi, falls after
            let m = ((x - y) % tau + tau) % tau;
            let s = if m == T::zero() || m == pi {
                T::zero()
            } else if m < pi {
                T::one()
            } else {
                -T::one()
            };
            (s, -s)
        },
    )
}

/// Weights for the amplitude and phase terms of the perception loss.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FreqLossConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Zero-pad spatial dims to the next power of two before the
    /// transform (fast path for non-power-of-two patches).
    pub pad_to_pow2: bool,
}

impl Default for FreqLossConfig {
    fn default() -> Self {
        // subdominant to the noise loss at initialization
        FreqLossConfig {
            gamma1: 0.01,
            gamma2: 0.01,
            pad_to_pow2: false,
        }
    }
}

/// Mean-reduced spectral L1 between a constructed image and its target;
/// differentiable with respect to `x_low`.
pub fn freq_loss<T: Scalar>(
    x_low: &Tensor<T>,
    x_high: &Tensor<T>,
    cfg: &FreqLossConfig,
) -> Result<Tensor<T>> {
    if x_low.shape() != x_high.shape() {
        return Err(Error::ShapeMismatch {
            op: "freq_loss",
            lhs: x_low.shape().to_vec(),
            rhs: x_high.shape().to_vec(),
        });
    }
    let (lo, hi) = if cfg.pad_to_pow2 {
        match x_low.shape() {
            [_, h, w] if !(h.is_power_of_two() && w.is_power_of_two()) => {
                let h2 = h.next_power_of_two();
                let w2 = w.next_power_of_two();
                (x_low.pad2d_zero(h2, w2)?, x_high.pad2d_zero(h2, w2)?)
            }
            _ => (x_low.clone(), x_high.clone()),
        }
    } else {
        (x_low.clone(), x_high.clone())
    };
    let sl = spectrum(&lo)?;
    let sh = spectrum(&hi)?;
    let amp_term = sl.amp.sub(&sh.amp)?.abs().mean_all();
    let pha_term = phase_dist(&sl.pha, &sh.pha)?.mean_all();
    amp_term
        .mul_scalar(T::fl(cfg.gamma1))
        .add(&pha_term.mul_scalar(T::fl(cfg.gamma2)))
}
