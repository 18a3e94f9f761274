//! Runtime self-checks: every numerical kernel is compared against an
//! independent reference implementation (recursive spline evaluation,
//! direct-loop convolution and KAN application, quadratic-time Fourier
//! transform, finite-difference gradients, hand-rolled optimizer
//! recurrence). Run via the `verify` command; the unit tests reuse the
//! same oracles.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{make_schedule, phase1_loss, phase2_loss, sample, ScheduleKind};
use crate::frequency::{fft2, freq_loss, ifft2, phase_dist, spectrum, FreqLossConfig};
use crate::imaging::ImageBuffer;
use crate::kan::bspline::SplineGrid;
use crate::kan::KanLayer;
use crate::metrics::{psnr, ssim};
use crate::rng::normal_vec;
use crate::tensor::conv::PadMode;
use crate::tensor::optim::{Adam, AdamConfig};
use crate::tensor::param::Param;
use crate::tensor::tape::backward;
use crate::tensor::{Tape, Tensor};
use crate::unet::{DenoiserConfig, DenoiserNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

#[derive(Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn run_check(
    name: &'static str,
    f: impl FnOnce() -> std::result::Result<String, String>,
) -> Check {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
    let seconds = start.elapsed().as_secs_f64();
    let (passed, detail) = match outcome {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(p) => (
            false,
            format!(
                "panicked: {}",
                p.downcast_ref::<&str>().copied().unwrap_or("<non-string>")
            ),
        ),
    };
    Check {
        name,
        passed,
        detail,
        seconds,
    }
}

// ---------------------------------------------------------------------
// Independent reference implementations (oracles).
// ---------------------------------------------------------------------

/// Quadratic-time discrete Fourier transform, the reference for the fast
/// path. Unnormalized forward, matching the production transform.
pub fn naive_dft(input: &[(f64, f64)], inverse: bool) -> Vec<(f64, f64)> {
    let n = input.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            let mut acc = (0.0, 0.0);
            for (m, &(re, im)) in input.iter().enumerate() {
                let ang = sign * std::f64::consts::TAU * (k * m) as f64 / n as f64;
                let (s, c) = ang.sin_cos();
                acc.0 += re * c - im * s;
                acc.1 += re * s + im * c;
            }
            acc
        })
        .collect()
}

/// Textbook Cox-de Boor recursion over an explicit knot vector, with the
/// 0/0 := 0 convention; intervals half-open, the last closed.
pub fn bspline_recursive(knots: &[f64], m: usize, k: usize, x: f64) -> f64 {
    if k == 0 {
        let last = knots.len() - 1;
        let closes = knots[m + 1] == knots[last] && x == knots[m + 1];
        return if (knots[m] <= x && x < knots[m + 1]) || closes {
            1.0
        } else {
            0.0
        };
    }
    let mut acc = 0.0;
    let d1 = knots[m + k] - knots[m];
    if d1 != 0.0 {
        acc += (x - knots[m]) / d1 * bspline_recursive(knots, m, k - 1, x);
    }
    let d2 = knots[m + k + 1] - knots[m + 1];
    if d2 != 0.0 {
        acc += (knots[m + k + 1] - x) / d2 * bspline_recursive(knots, m + 1, k - 1, x);
    }
    acc
}

fn silu64(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Direct triple loop over (token, output, input) edges; the reference
/// for the fused layer kernel.
pub fn kan_layer_naive(layer: &KanLayer<f64>, tokens: &Tensor<f64>) -> Vec<f64> {
    let nt = tokens.shape()[0];
    let (n_in, n_out) = (layer.n_in, layer.n_out);
    let nb = layer.grid.basis_count();
    let knots = layer.grid.knots();
    let k = layer.grid.order;
    let coeffs = layer.coefficients.value();
    let base = layer.base_weight.value();
    let spline = layer.spline_weight.value();
    let mut out = vec![0.0; nt * n_out];
    for t in 0..nt {
        for q in 0..n_out {
            for p in 0..n_in {
                let x = tokens.data()[t * n_in + p];
                let xc = x.clamp(layer.grid.t_min, layer.grid.t_max);
                let mut s = 0.0;
                for j in 0..nb {
                    s += coeffs.data()[(q * n_in + p) * nb + j]
                        * bspline_recursive(&knots, j, k, xc);
                }
                out[t * n_out + q] += base.data()[q * n_in + p] * silu64(x)
                    + spline.data()[q * n_in + p] * s;
            }
        }
    }
    out
}

/// Direct-loop cross-correlation matching `Tensor::conv2d` semantics.
pub fn conv2d_naive(
    input: &Tensor<f64>,
    kernel: &Tensor<f64>,
    stride: usize,
    padding: usize,
    mode: PadMode,
) -> Vec<f64> {
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, k) = (kernel.shape()[0], kernel.shape()[2]);
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            let v = match mode {
                                PadMode::Zero => {
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        0.0
                                    } else {
                                        input.data()[(ci * h + iy as usize) * w + ix as usize]
                                    }
                                }
                                PadMode::Replicate => {
                                    let iy = iy.clamp(0, h as isize - 1) as usize;
                                    let ix = ix.clamp(0, w as isize - 1) as usize;
                                    input.data()[(ci * h + iy) * w + ix]
                                }
                            };
                            acc += v * kernel.data()[((co * cin + ci) * k + ky) * k + kx];
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

/// Central-difference gradient of `loss` with respect to one parameter.
pub fn finite_diff(p: &Param<f64>, loss: &mut dyn FnMut() -> f64, eps: f64) -> Vec<f64> {
    let base = p.value().data().to_vec();
    let mut grads = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        p.set_data(plus);
        let up = loss();
        let mut minus = base.clone();
        minus[i] -= eps;
        p.set_data(minus);
        let down = loss();
        grads.push((up - down) / (2.0 * eps));
    }
    p.set_data(base);
    grads
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (1.0 + a.abs().max(n.abs())))
        .fold(0.0, f64::max)
}

fn grad_of(p: &Param<f64>, build: &mut dyn FnMut(&Tape<f64>) -> Tensor<f64>) -> Vec<f64> {
    p.zero_grad();
    let tape = Tape::new();
    let loss = build(&tape);
    backward(&loss).expect("backward");
    p.grad()
}

fn expect(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------------
// Individual checks.
// ---------------------------------------------------------------------

fn check_elementwise_grads() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = Param::new("a", normal_vec::<f64>(&mut rng, 24), &[2, 3, 4]);
    let b = Param::new(
        "b",
        normal_vec::<f64>(&mut rng, 4)
            .into_iter()
            .map(|v: f64| v + 3.0)
            .collect(),
        &[4],
    );
    let build = |tape: &Tape<f64>| {
        let x = a.tracked(tape);
        let y = b.tracked(tape);
        // Chain exercising broadcasting, division and transcendentals.
        x.mul(&y)
            .unwrap()
            .silu()
            .add(&x.exp().div(&y).unwrap())
            .unwrap()
            .sin()
            .mean_all()
    };
    let mut worst: f64 = 0.0;
    for p in [&a, &b] {
        let g = grad_of(p, &mut |t| build(t));
        let fd = finite_diff(p, &mut || build(&Tape::new()).item(), 1e-6);
        worst = worst.max(max_rel_err(&g, &fd));
    }
    expect(worst < 1e-6, format!("max rel err {worst:.3e} >= 1e-6"))?;
    Ok(format!("max rel err {worst:.3e} (tol 1e-6)"))
}

fn check_matmul_grad() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = Param::new("a", normal_vec::<f64>(&mut rng, 6), &[2, 3]);
    let b = Param::new("b", normal_vec::<f64>(&mut rng, 12), &[3, 4]);
    let build = |tape: &Tape<f64>| {
        a.tracked(tape)
            .matmul(&b.tracked(tape))
            .unwrap()
            .silu()
            .sum_all()
    };
    let mut worst: f64 = 0.0;
    for p in [&a, &b] {
        let g = grad_of(p, &mut |t| build(t));
        let fd = finite_diff(p, &mut || build(&Tape::new()).item(), 1e-6);
        worst = worst.max(max_rel_err(&g, &fd));
    }
    expect(worst < 1e-7, format!("max rel err {worst:.3e} >= 1e-7"))?;
    Ok(format!("max rel err {worst:.3e} (tol 1e-7)"))
}

fn check_conv_oracle() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = Tensor::from_vec(normal_vec::<f64>(&mut rng, 2 * 5 * 6), &[2, 5, 6]);
    let k = Tensor::from_vec(normal_vec::<f64>(&mut rng, 3 * 2 * 9), &[3, 2, 3, 3]);
    let mut worst: f64 = 0.0;
    for mode in [PadMode::Zero, PadMode::Replicate] {
        for (stride, padding) in [(1, 1), (2, 1), (1, 0)] {
            let fast = x.conv2d(&k, stride, padding, mode).map_err(|e| e.to_string())?;
            let slow = conv2d_naive(&x, &k, stride, padding, mode);
            worst = worst.max(max_rel_err(fast.data().iter().map(|v| *v).collect::<Vec<_>>().as_slice(), &slow));
        }
    }
    // Replicate padding must keep a constant image constant under an
    // averaging kernel.
    let cst = Tensor::full(&[1, 4, 4], 0.7f64);
    let avg = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
    let out = cst
        .conv2d(&avg, 1, 1, PadMode::Replicate)
        .map_err(|e| e.to_string())?;
    let dev = out
        .data()
        .iter()
        .map(|v| (v - 0.7).abs())
        .fold(0.0, f64::max);
    expect(worst < 1e-12, format!("conv vs direct loop err {worst:.3e}"))?;
    expect(dev < 1e-12, format!("replicate constant drift {dev:.3e}"))?;
    Ok(format!(
        "direct-loop err {worst:.3e}, constant drift {dev:.3e}"
    ))
}

fn check_conv_grads() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = Param::new("x", normal_vec::<f64>(&mut rng, 2 * 4 * 4), &[2, 4, 4]);
    let k = Param::new("k", normal_vec::<f64>(&mut rng, 2 * 2 * 9), &[2, 2, 3, 3]);
    let dk = Param::new("dk", normal_vec::<f64>(&mut rng, 2 * 9), &[2, 3, 3]);
    let mut worst: f64 = 0.0;
    for mode in [PadMode::Zero, PadMode::Replicate] {
        let build = |tape: &Tape<f64>| {
            x.tracked(tape)
                .conv2d(&k.tracked(tape), 1, 1, mode)
                .unwrap()
                .silu()
                .mean_all()
        };
        for p in [&x, &k] {
            let g = grad_of(p, &mut |t| build(t));
            let fd = finite_diff(p, &mut || build(&Tape::new()).item(), 1e-6);
            worst = worst.max(max_rel_err(&g, &fd));
        }
    }
    let build_dw = |tape: &Tape<f64>| {
        x.tracked(tape)
            .depthwise_conv2d(&dk.tracked(tape))
            .unwrap()
            .silu()
            .mean_all()
    };
    for p in [&x, &dk] {
        let g = grad_of(p, &mut |t| build_dw(t));
        let fd = finite_diff(p, &mut || build_dw(&Tape::new()).item(), 1e-6);
        worst = worst.max(max_rel_err(&g, &fd));
    }
    expect(worst < 1e-7, format!("max rel err {worst:.3e} >= 1e-7"))?;
    Ok(format!("max rel err {worst:.3e} (tol 1e-7)"))
}

fn check_norm_grads() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = Param::new("x", normal_vec::<f64>(&mut rng, 4 * 3 * 3), &[4, 3, 3]);
    let gamma = Param::new("gamma", normal_vec::<f64>(&mut rng, 4), &[4]);
    let beta = Param::new("beta", normal_vec::<f64>(&mut rng, 4), &[4]);
    let mut worst: f64 = 0.0;
    let build_gn = |tape: &Tape<f64>| {
        x.tracked(tape)
            .group_norm(2, &gamma.tracked(tape), &beta.tracked(tape), 1e-5)
            .unwrap()
            .silu()
            .mean_all()
    };
    for p in [&x, &gamma, &beta] {
        let g = grad_of(p, &mut |t| build_gn(t));
        let fd = finite_diff(p, &mut || build_gn(&Tape::new()).item(), 1e-6);
        worst = worst.max(max_rel_err(&g, &fd));
    }
    let tok = Param::new("tok", normal_vec::<f64>(&mut rng, 5 * 4), &[5, 4]);
    let build_rms = |tape: &Tape<f64>| {
        tok.tracked(tape)
            .rms_norm_tokens(&gamma.tracked(tape), &beta.tracked(tape), 1e-6)
            .unwrap()
            .silu()
            .mean_all()
    };
    for p in [&tok, &gamma, &beta] {
        let g = grad_of(p, &mut |t| build_rms(t));
        let fd = finite_diff(p, &mut || build_rms(&Tape::new()).item(), 1e-6);
        worst = worst.max(max_rel_err(&g, &fd));
    }
    expect(worst < 1e-6, format!("max rel err {worst:.3e} >= 1e-6"))?;
    Ok(format!("max rel err {worst:.3e} (tol 1e-6)"))
}

fn check_bspline_partition() -> std::result::Result<String, String> {
    let grid = SplineGrid::standard();
    let knots = grid.knots();
    let nb = grid.basis_count();
    let mut worst_sum: f64 = 0.0;
    let mut worst_ref: f64 = 0.0;
    for i in 0..=400 {
        let x = -1.0 + 2.0 * i as f64 / 400.0;
        let vals = grid.basis::<f64>(x);
        let sum: f64 = vals.iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        if vals.iter().any(|v| *v < -1e-15) {
            return Err(format!("negative basis value at x={x}"));
        }
        for (m, v) in vals.iter().enumerate().take(nb) {
            worst_ref = worst_ref.max((v - bspline_recursive(&knots, m, grid.order, x)).abs());
        }
    }
    expect(worst_sum < 1e-12, format!("partition err {worst_sum:.3e}"))?;
    expect(worst_ref < 1e-12, format!("recursion mismatch {worst_ref:.3e}"))?;
    Ok(format!(
        "partition err {worst_sum:.3e}, recursion mismatch {worst_ref:.3e}"
    ))
}

fn check_bspline_derivative() -> std::result::Result<String, String> {
    let grid = SplineGrid::standard();
    let nb = grid.basis_count();
    let mut worst: f64 = 0.0;
    for i in 0..=50 {
        // Stay inside the domain so the finite difference is two-sided.
        let x = -0.99 + 1.98 * i as f64 / 50.0;
        let mut vals = vec![0.0f64; nb];
        let mut der = vec![0.0f64; nb];
        grid.basis_into(x, &mut vals, Some(&mut der));
        let h = 1e-6;
        let up = grid.basis::<f64>(x + h);
        let dn = grid.basis::<f64>(x - h);
        for m in 0..nb {
            worst = worst.max((der[m] - (up[m] - dn[m]) / (2.0 * h)).abs());
        }
    }
    expect(worst < 1e-6, format!("derivative err {worst:.3e}"))?;
    Ok(format!("derivative err {worst:.3e} (tol 1e-6)"))
}

fn check_kan_layer_oracle() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let layer: KanLayer<f64> = KanLayer::init("phi", 3, 4, SplineGrid::standard(), &mut rng);
    // Include out-of-domain values to exercise clamping.
    let mut data = normal_vec::<f64>(&mut rng, 7 * 3);
    data[0] = 2.5;
    data[1] = -3.0;
    let tokens = Tensor::from_vec(data, &[7, 3]);
    let fast = layer.forward(&tokens, None).map_err(|e| e.to_string())?;
    let slow = kan_layer_naive(&layer, &tokens);
    let err = max_rel_err(fast.data(), &slow);
    expect(err < 1e-12, format!("triple-loop mismatch {err:.3e}"))?;
    Ok(format!("triple-loop mismatch {err:.3e}"))
}

fn check_kan_layer_grad() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let layer: KanLayer<f64> = KanLayer::init("phi", 3, 2, SplineGrid::standard(), &mut rng);
    let input = Param::new("tokens", normal_vec::<f64>(&mut rng, 5 * 3), &[5, 3]);
    let build = |tape: &Tape<f64>| {
        layer
            .forward(&input.tracked(tape), Some(tape))
            .unwrap()
            .silu()
            .mean_all()
    };
    let mut worst: f64 = 0.0;
    for p in [
        &input,
        &layer.coefficients,
        &layer.base_weight,
        &layer.spline_weight,
    ] {
        let g = grad_of(p, &mut |t| build(t));
        let fd = finite_diff(p, &mut || build(&Tape::new()).item(), 1e-6);
        worst = worst.max(max_rel_err(&g, &fd));
    }
    expect(worst < 1e-6, format!("max rel err {worst:.3e} >= 1e-6"))?;
    Ok(format!("max rel err {worst:.3e} (tol 1e-6)"))
}

fn check_fft_oracle() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut worst: f64 = 0.0;
    // 1D cross-check through the 2D interface with height 1.
    for w in [4usize, 6, 8, 16] {
        let x = Tensor::from_vec(normal_vec::<f64>(&mut rng, w), &[1, 1, w]);
        let (re, im) = fft2(&x).map_err(|e| e.to_string())?;
        let signal: Vec<(f64, f64)> = x.data().iter().map(|v| (*v, 0.0)).collect();
        let want = naive_dft(&signal, false);
        for i in 0..w {
            worst = worst.max((re.data()[i] - want[i].0).abs());
            worst = worst.max((im.data()[i] - want[i].1).abs());
        }
    }
    // 2D: round trip, linearity, and the energy identity
    // sum |x|^2 = (1/HW) sum |X|^2.
    let x = Tensor::from_vec(normal_vec::<f64>(&mut rng, 2 * 4 * 8), &[2, 4, 8]);
    let y = Tensor::from_vec(normal_vec::<f64>(&mut rng, 2 * 4 * 8), &[2, 4, 8]);
    let (re, im) = fft2(&x).map_err(|e| e.to_string())?;
    let (back, back_im) = ifft2(&re, &im).map_err(|e| e.to_string())?;
    let mut round: f64 = 0.0;
    for i in 0..x.len() {
        round = round.max((back.data()[i] - x.data()[i]).abs());
        round = round.max(back_im.data()[i].abs());
    }
    let (rey, imy) = fft2(&y).map_err(|e| e.to_string())?;
    let (res, ims) = fft2(&x.add(&y).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut lin: f64 = 0.0;
    for i in 0..x.len() {
        lin = lin.max((res.data()[i] - re.data()[i] - rey.data()[i]).abs());
        lin = lin.max((ims.data()[i] - im.data()[i] - imy.data()[i]).abs());
    }
    let spatial: f64 = x.data().iter().map(|v| v * v).sum();
    let spectral: f64 = re
        .data()
        .iter()
        .zip(im.data())
        .map(|(a, b)| a * a + b * b)
        .sum::<f64>()
        / (4.0 * 8.0);
    let energy = (spatial - spectral).abs() / spatial;
    expect(worst < 1e-9, format!("dft mismatch {worst:.3e}"))?;
    expect(round < 1e-9, format!("round-trip err {round:.3e}"))?;
    expect(lin < 1e-9, format!("linearity err {lin:.3e}"))?;
    expect(energy < 1e-12, format!("energy identity err {energy:.3e}"))?;
    Ok(format!(
        "dft {worst:.2e}, round-trip {round:.2e}, linearity {lin:.2e}, energy {energy:.2e}"
    ))
}

fn check_fft_grads() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = Param::new("x", normal_vec::<f64>(&mut rng, 1 * 4 * 4), &[1, 4, 4]);
    let wre = Tensor::from_vec(normal_vec::<f64>(&mut rng, 16), &[1, 4, 4]);
    let wim = Tensor::from_vec(normal_vec::<f64>(&mut rng, 16), &[1, 4, 4]);
    let build = |tape: &Tape<f64>| {
        let (re, im) = fft2(&x.tracked(tape)).unwrap();
        re.mul(&wre).unwrap().add(&im.mul(&wim).unwrap()).unwrap().sum_all()
    };
    let g = grad_of(&x, &mut |t| build(t));
    let fd = finite_diff(&x, &mut || build(&Tape::new()).item(), 1e-6);
    let lin_err = max_rel_err(&g, &fd);

    // Amplitude/phase gradients away from the zero-magnitude singularity.
    let build_sp = |tape: &Tape<f64>| {
        let sp = spectrum(&x.tracked(tape)).unwrap();
        sp.amp.mul(&wre).unwrap().add(&sp.pha.mul(&wim).unwrap()).unwrap().sum_all()
    };
    let g2 = grad_of(&x, &mut |t| build_sp(t));
    let fd2 = finite_diff(&x, &mut || build_sp(&Tape::new()).item(), 1e-6);
    let sp_err = max_rel_err(&g2, &fd2);
    expect(lin_err < 1e-7, format!("transform grad err {lin_err:.3e}"))?;
    expect(sp_err < 1e-5, format!("amp/phase grad err {sp_err:.3e}"))?;
    Ok(format!("transform {lin_err:.2e}, amp/phase {sp_err:.2e}"))
}

fn check_phase_distance() -> std::result::Result<String, String> {
    use std::f64::consts::{PI, TAU};
    let a = Tensor::from_vec(vec![0.0f64, 0.05, 3.0, -3.0], &[4]);
    let b = Tensor::from_vec(vec![TAU - 0.1, -0.05, -3.0, 3.0], &[4]);
    let d = phase_dist(&a, &b).map_err(|e| e.to_string())?;
    let want = [0.1, 0.1, TAU - 6.0, TAU - 6.0];
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        worst = worst.max((d.data()[i] - want[i]).abs());
    }
    let d_sym = phase_dist(&b, &a).map_err(|e| e.to_string())?;
    for i in 0..4 {
        worst = worst.max((d.data()[i] - d_sym.data()[i]).abs());
        if d.data()[i] > PI + 1e-12 || d.data()[i] < 0.0 {
            return Err(format!("distance {} outside [0, pi]", d.data()[i]));
        }
    }
    // Gradient at generic (non-boundary) points.
    let p = Param::new("p", vec![0.3f64, 2.9, -1.2], &[3]);
    let q = Tensor::from_vec(vec![-0.4f64, -2.8, 0.9], &[3]);
    let build = |tape: &Tape<f64>| phase_dist(&p.tracked(tape), &q).unwrap().sum_all();
    let g = grad_of(&p, &mut |t| build(t));
    let fd = finite_diff(&p, &mut || build(&Tape::new()).item(), 1e-6);
    let g_err = max_rel_err(&g, &fd);
    expect(worst < 1e-12, format!("wrapped distance err {worst:.3e}"))?;
    expect(g_err < 1e-9, format!("gradient err {g_err:.3e}"))?;
    Ok(format!("distance {worst:.2e}, gradient {g_err:.2e}"))
}

fn check_freq_loss_grad() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x = Param::new("x", normal_vec::<f64>(&mut rng, 1 * 4 * 4), &[1, 4, 4]);
    let target = Tensor::from_vec(normal_vec::<f64>(&mut rng, 16), &[1, 4, 4]);
    let cfg = FreqLossConfig::default();
    let build = |tape: &Tape<f64>| freq_loss(&x.tracked(tape), &target, &cfg).unwrap();
    let g = grad_of(&x, &mut |t| build(t));
    let fd = finite_diff(&x, &mut || build(&Tape::new()).item(), 1e-6);
    let err = max_rel_err(&g, &fd);
    expect(err < 1e-5, format!("gradient err {err:.3e}"))?;
    Ok(format!("gradient err {err:.2e} (tol 1e-5)"))
}

fn check_schedule_identities() -> std::result::Result<String, String> {
    // Constant beta = 0.1: cumulative products by hand.
    let s = make_schedule(4, 0.1, 0.1, ScheduleKind::Linear).map_err(|e| e.to_string())?;
    let want = [0.9, 0.81, 0.729, 0.6561];
    let mut worst: f64 = 0.0;
    for (t, w) in want.iter().enumerate() {
        worst = worst.max((s.alpha_bar(t + 1).unwrap() - w).abs());
    }
    expect(worst < 1e-12, format!("hand product err {worst:.3e}"))?;
    for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
        let s = make_schedule(50, 1e-4, 0.02, kind).map_err(|e| e.to_string())?;
        let mut prev = 1.0;
        for t in 1..=s.len() {
            let b = s.beta(t).unwrap();
            if !(0.0 < b && b < 1.0) {
                return Err(format!("{kind:?} beta({t}) = {b} outside (0,1)"));
            }
            let ab = s.alpha_bar(t).unwrap();
            if ab >= prev {
                return Err(format!("{kind:?} alpha_bar not strictly decreasing at t={t}"));
            }
            let recon: f64 = (1..=t).map(|i| s.alpha(i).unwrap()).product();
            if (recon - ab).abs() > 1e-12 {
                return Err(format!("{kind:?} alpha_bar product identity fails at t={t}"));
            }
            prev = ab;
        }
    }
    Ok(format!("hand product err {worst:.3e}; identities hold"))
}

/// Reverse-step algebra oracle: from x_T built by the closed-form forward
/// corruption, stepping with the exact consistent noise at each t must
/// land on x0 itself (the noise coefficient contracts to zero at t=1).
/// `flip` injects a sign error to prove the check can fail.
pub fn teacher_forced_error(t_total: usize, flip: bool) -> f64 {
    let sched = make_schedule(t_total, 0.05, 0.3, ScheduleKind::Linear).expect("schedule");
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x0 = Tensor::from_vec(normal_vec::<f64>(&mut rng, 1 * 4 * 4), &[1, 4, 4]);
    let eps = Tensor::from_vec(normal_vec::<f64>(&mut rng, 16), &[1, 4, 4]);
    let mut x = crate::diffusion::q_sample(&x0, t_total, &eps, &sched).expect("q_sample");
    for t in (1..=t_total).rev() {
        let ab = sched.alpha_bar(t).unwrap();
        // Exact noise consistent with x_t: (x_t - sqrt(ab) x0)/sqrt(1-ab).
        let sign = if flip { -1.0 } else { 1.0 };
        let eps_hat = x
            .sub(&x0.mul_scalar(ab.sqrt()))
            .unwrap()
            .mul_scalar(sign / (1.0 - ab).sqrt());
        x = crate::diffusion::reverse_mean_step(&x, &eps_hat, t, &sched).expect("step");
    }
    x.sub(&x0)
        .unwrap()
        .data()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

fn check_reverse_step() -> std::result::Result<String, String> {
    let err = teacher_forced_error(5, false);
    let bad = teacher_forced_error(5, true);
    expect(err < 1e-9, format!("teacher-forced residual {err:.3e}"))?;
    expect(
        bad > 0.1,
        format!("sign-flip control too small ({bad:.3e}); check is vacuous"),
    )?;
    Ok(format!("residual {err:.2e}; sign-flip control {bad:.2e}"))
}

fn check_adam_recurrence() -> std::result::Result<String, String> {
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let p = Param::new("w", vec![1.0f64, -2.0], &[2]);
    let mut opt: Adam<f64> = Adam::new(cfg);
    // Reference recurrence computed side by side.
    let mut w = [1.0f64, -2.0];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    let mut worst: f64 = 0.0;
    for step in 1..=5 {
        let grads: Vec<f64> = w.iter().map(|x| 2.0 * x + 0.3).collect();
        // Same gradient fed to both paths.
        let actual: Vec<f64> = p.value().data().iter().map(|x| 2.0 * x + 0.3).collect();
        p.accumulate_grad(&actual);
        opt.step(std::slice::from_ref(&p));
        for i in 0..2 {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
            let mh = m[i] / (1.0 - cfg.beta1.powi(step));
            let vh = v[i] / (1.0 - cfg.beta2.powi(step));
            w[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            worst = worst.max((p.value().data()[i] - w[i]).abs());
        }
    }
    expect(worst < 1e-12, format!("recurrence divergence {worst:.3e}"))?;
    Ok(format!("recurrence divergence {worst:.3e} over 5 steps"))
}

fn check_metrics() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let base: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.gen_range(0.2..0.8)).collect();
    let a = ImageBuffer::new(3, 16, 16, base.clone());
    let shifted = ImageBuffer::new(3, 16, 16, base.iter().map(|v| v + 0.1).collect());
    let p = psnr(&a, &shifted).map_err(|e| e.to_string())?;
    expect((p - 20.0).abs() < 1e-12, format!("uniform +0.1 gave {p} dB, want 20"))?;
    let ident = psnr(&a, &a).map_err(|e| e.to_string())?;
    expect(ident.is_infinite(), format!("identical images gave {ident}"))?;
    let s_ident = ssim(&a, &a).map_err(|e| e.to_string())?;
    expect((s_ident - 1.0).abs() < 1e-9, format!("ssim(x,x) = {s_ident}"))?;
    // Structureless images: SSIM reduces to the luminance term.
    let c1 = ImageBuffer::new(1, 16, 16, vec![0.4; 256]);
    let c2 = ImageBuffer::new(1, 16, 16, vec![0.5; 256]);
    let s = ssim(&c1, &c2).map_err(|e| e.to_string())?;
    let k1sq = 0.01f64 * 0.01;
    let want = (2.0 * 0.4 * 0.5 + k1sq) / (0.4f64 * 0.4 + 0.5 * 0.5 + k1sq);
    expect((s - want).abs() < 1e-6, format!("constant ssim {s} vs closed form {want}"))?;
    Ok("psnr 20 dB exact; ssim identities hold".into())
}

fn tiny_config() -> DenoiserConfig {
    DenoiserConfig {
        image_channels: 1,
        base_channels: 4,
        channel_mults: vec![1, 2],
        num_kan_blocks: 1,
        kan_layers_per_block: 1,
        time_embed_dim: 8,
        groups: 2,
        ..DenoiserConfig::default()
    }
}

fn check_net_grad() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let cfg = tiny_config();
    let net: DenoiserNet<f64> = DenoiserNet::init(&cfg, &mut rng);
    let xt = Tensor::from_vec(normal_vec::<f64>(&mut rng, 64), &[1, 8, 8]);
    let y = Tensor::from_vec(normal_vec::<f64>(&mut rng, 64), &[1, 8, 8]);
    let eps = Tensor::from_vec(normal_vec::<f64>(&mut rng, 64), &[1, 8, 8]);
    let loss_value = || -> f64 {
        let (eps_hat, u) = net.forward(&xt, &y, 0.7, None).unwrap();
        let d = eps.sub(&eps_hat).unwrap();
        d.mul(&d)
            .unwrap()
            .mul(&u.neg().exp())
            .unwrap()
            .add(&u)
            .unwrap()
            .mean_all()
            .item()
    };
    let params = net.params();
    for p in &params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let (eps_hat, u) = net.forward(&xt, &y, 0.7, Some(&tape)).unwrap();
    let d = eps.sub(&eps_hat).unwrap();
    let loss = d
        .mul(&d)
        .unwrap()
        .mul(&u.neg().exp())
        .unwrap()
        .add(&u)
        .unwrap()
        .mean_all();
    backward(&loss).map_err(|e| e.to_string())?;

    // Spot-check a random subsample of coordinates across all parameters.
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut pick_rng = ChaCha8Rng::seed_from_u64(24);
    for p in &params {
        let analytic = p.grad();
        let n = p.len();
        let tries = 2.min(n);
        for _ in 0..tries {
            let i = pick_rng.gen_range(0..n);
            let mut up = p.value().data().to_vec();
            let mut dn = up.clone();
            let h = 1e-5;
            up[i] += h;
            dn[i] -= h;
            let orig = p.value().data().to_vec();
            p.set_data(up);
            let lu = loss_value();
            p.set_data(dn);
            let ld = loss_value();
            p.set_data(orig);
            let fd = (lu - ld) / (2.0 * h);
            worst = worst.max((analytic[i] - fd).abs() / (1.0 + analytic[i].abs().max(fd.abs())));
            checked += 1;
        }
    }
    expect(worst < 5e-5, format!("net grad err {worst:.3e} over {checked} coords"))?;
    Ok(format!("net grad err {worst:.2e} over {checked} coords"))
}

fn check_phase2_gradient_flow() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let cfg = tiny_config();
    let net: DenoiserNet<f64> = DenoiserNet::init(&cfg, &mut rng);
    net.freeze_uncertainty();
    let sched = make_schedule(10, 1e-3, 0.05, ScheduleKind::Cosine).map_err(|e| e.to_string())?;
    let x0 = Tensor::from_vec(normal_vec::<f64>(&mut rng, 64), &[1, 8, 8]);
    let y = Tensor::from_vec(normal_vec::<f64>(&mut rng, 64), &[1, 8, 8]);
    let mut nrng = ChaCha8Rng::seed_from_u64(26);
    let mut trng = ChaCha8Rng::seed_from_u64(27);
    // The output heads end in zero-initialized convolutions (so the
    // untrained net predicts zero noise); one optimizer step makes them
    // nonzero so gradient can reach the trunk at all.
    let mut opt: Adam<f64> = Adam::new(AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    });
    let params = net.params();
    let warm = Tape::new();
    let (warm_loss, _) =
        phase2_loss(&net, &x0, &y, &sched, &FreqLossConfig::default(), &mut nrng, &mut trng, &warm)
            .map_err(|e| e.to_string())?;
    backward(&warm_loss).map_err(|e| e.to_string())?;
    opt.step(&params);

    let tape = Tape::new();
    for p in &params {
        p.zero_grad();
    }
    let (loss, parts) =
        phase2_loss(&net, &x0, &y, &sched, &FreqLossConfig::default(), &mut nrng, &mut trng, &tape)
            .map_err(|e| e.to_string())?;
    backward(&loss).map_err(|e| e.to_string())?;
    expect(parts.freq > 0.0, "frequency term is zero".to_string())?;
    let coeffs = net.spline_coefficient_params();
    let (mut nonzero, mut total) = (0usize, 0usize);
    for p in &coeffs {
        for g in p.grad() {
            total += 1;
            if g != 0.0 {
                nonzero += 1;
            }
        }
    }
    let frac = nonzero as f64 / total as f64;
    for p in net.uncertainty_params() {
        if p.grad().iter().any(|g| *g != 0.0) {
            return Err(format!("frozen parameter {} received gradient", p.name()));
        }
    }
    expect(
        frac > 0.99,
        format!("only {:.2}% of spline coefficients received gradient", frac * 100.0),
    )?;
    Ok(format!(
        "{:.2}% spline coefficients with gradient; frozen head untouched",
        frac * 100.0
    ))
}

fn check_sampling() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let cfg = tiny_config();
    let net: DenoiserNet<f64> = DenoiserNet::init(&cfg, &mut rng);
    let sched = make_schedule(5, 1e-3, 0.05, ScheduleKind::Cosine).map_err(|e| e.to_string())?;
    let y = Tensor::from_vec(normal_vec::<f64>(&mut rng, 64), &[1, 8, 8]);
    let a = sample(&net, &y, &sched, 7, false).map_err(|e| e.to_string())?;
    let b = sample(&net, &y, &sched, 7, false).map_err(|e| e.to_string())?;
    expect(
        a.data() == b.data(),
        "deterministic sampling is not reproducible".to_string(),
    )?;
    if a.data().iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err("sample left [-1, 1] or is non-finite".into());
    }
    let c = sample(&net, &y, &sched, 8, false).map_err(|e| e.to_string())?;
    expect(a.data() != c.data(), "seed has no effect".to_string())?;
    Ok("reproducible, bounded, seed-sensitive".into())
}

fn check_phase1_optimum() -> std::result::Result<String, String> {
    // Pointwise e^{-u} d^2 + u is minimized at u* = ln d^2.
    let mut worst: f64 = 0.0;
    for d2 in [0.01f64, 0.5, 3.0] {
        let f = |u: f64| (-u).exp() * d2 + u;
        let u_star = d2.ln();
        for du in [-0.2, 0.2] {
            let gap = f(u_star + du) - f(u_star);
            if gap <= 0.0 {
                return Err(format!("not a minimum at d^2={d2}: gap {gap}"));
            }
            worst = worst.max(gap);
        }
    }
    // And the phase-1 objective is finite and differentiable end to end.
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let cfg = tiny_config();
    let net: DenoiserNet<f64> = DenoiserNet::init(&cfg, &mut rng);
    let sched = make_schedule(10, 1e-3, 0.05, ScheduleKind::Cosine).map_err(|e| e.to_string())?;
    let x0 = Tensor::from_vec(normal_vec::<f64>(&mut rng, 64), &[1, 8, 8]);
    let y = Tensor::from_vec(normal_vec::<f64>(&mut rng, 64), &[1, 8, 8]);
    let tape = Tape::new();
    let mut nrng = ChaCha8Rng::seed_from_u64(30);
    let mut trng = ChaCha8Rng::seed_from_u64(31);
    let (loss, _) = phase1_loss(&net, &x0, &y, &sched, &mut nrng, &mut trng, &tape)
        .map_err(|e| e.to_string())?;
    backward(&loss).map_err(|e| e.to_string())?;
    expect(loss.item().is_finite(), "phase-1 loss not finite".to_string())?;
    Ok("pointwise optimum at ln d^2; objective differentiable".into())
}

fn check_checkpoint_roundtrip() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let cfg = tiny_config();
    let net: DenoiserNet<f64> = DenoiserNet::init(&cfg, &mut rng);
    let params = net.params();
    let sched_cfg = crate::config::ScheduleConfig::default();
    let dir = std::env::temp_dir().join(format!("verify-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("roundtrip.ckpt");
    crate::checkpoint::save(&path, &cfg, &sched_cfg, &params, 42, 1, None)
        .map_err(|e| e.to_string())?;
    let loaded = crate::checkpoint::load::<f64>(&path).map_err(|e| e.to_string())?;
    let mut rng2 = ChaCha8Rng::seed_from_u64(99);
    let net2: DenoiserNet<f64> = DenoiserNet::init(&cfg, &mut rng2);
    loaded.apply(&net2.params()).map_err(|e| e.to_string())?;
    for (a, b) in params.iter().zip(net2.params()) {
        if a.value().data() != b.value().data() {
            return Err(format!("parameter {} not bit-identical after reload", a.name()));
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    expect(loaded.step == 42 && loaded.phase == 1, "metadata mismatch".to_string())?;
    Ok("bit-identical reload; metadata preserved".into())
}

pub fn run(level: Level) -> Vec<Check> {
    let mut checks = vec![
        run_check("elementwise-gradients", check_elementwise_grads),
        run_check("matmul-gradient", check_matmul_grad),
        run_check("conv-direct-loop", check_conv_oracle),
        run_check("conv-gradients", check_conv_grads),
        run_check("norm-gradients", check_norm_grads),
        run_check("spline-partition-of-unity", check_bspline_partition),
        run_check("spline-derivative", check_bspline_derivative),
        run_check("kan-layer-direct-loop", check_kan_layer_oracle),
        run_check("kan-layer-gradients", check_kan_layer_grad),
        run_check("fourier-vs-quadratic", check_fft_oracle),
        run_check("fourier-gradients", check_fft_grads),
        run_check("phase-distance", check_phase_distance),
        run_check("frequency-loss-gradient", check_freq_loss_grad),
        run_check("schedule-identities", check_schedule_identities),
        run_check("reverse-step-teacher-forcing", check_reverse_step),
        run_check("adam-recurrence", check_adam_recurrence),
        run_check("psnr-ssim-identities", check_metrics),
    ];
    if level == Level::Full {
        checks.push(run_check("network-gradient-spot-check", check_net_grad));
        checks.push(run_check("phase2-gradient-flow", check_phase2_gradient_flow));
        checks.push(run_check("reverse-loop-sampling", check_sampling));
        checks.push(run_check("phase1-heteroscedastic-optimum", check_phase1_optimum));
        checks.push(run_check("checkpoint-roundtrip", check_checkpoint_roundtrip));
    }
    checks
}

/// Print one line per check; true iff all passed.
pub fn report(checks: &[Check]) -> bool {
    let mut ok = true;
    for c in checks {
        println!(
            "{} {:<32} {:>7.3}s  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.seconds,
            c.detail
        );
        ok &= c.passed;
    }
    ok
}
