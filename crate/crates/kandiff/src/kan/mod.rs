//! Kolmogorov-Arnold layers: learnable per-edge spline activations, the
//! n_in -> n_out function-matrix layer, and the KAN block (N layers
//! interleaved with depthwise convolutions, residual around the block).

pub mod bspline;

use std::sync::Arc;

pub use bspline::SplineGrid;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::normal_vec;
use crate::tensor::param::Param;
use crate::tensor::tape::record_op;
use crate::tensor::{Scalar, Tape, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// One learnable edge activation:
/// phi(x) = base_weight * silu(x) + spline_weight * sum_j c_j B_j(x),
/// with x clamped to the grid domain for the spline branch.
pub struct SplineActivation<T: Scalar> {
    pub grid: SplineGrid,
    pub coefficients: Param<T>,
    pub base_weight: Param<T>,
    pub spline_weight: Param<T>,
}

impl<T: Scalar> SplineActivation<T> {
    pub fn new(name: &str, grid: SplineGrid, rng: &mut ChaCha8Rng) -> Self {
        let nb = grid.basis_count();
        let sigma = 0.1 / (grid.grid_size as f64).sqrt();
        let coeffs: Vec<T> = normal_vec::<T>(rng, nb)
            .into_iter()
            .map(|v| v * T::fl(sigma))
            .collect();
        SplineActivation {
            grid,
            coefficients: Param::new(format!("{name}.coefficients"), coeffs, &[nb]),
            base_weight: Param::new(format!("{name}.base_weight"), vec![T::one()], &[1]),
            spline_weight: Param::new(format!("{name}.spline_weight"), vec![T::one()], &[1]),
        }
    }

    pub fn params(&self, out: &mut Vec<Param<T>>) {
        out.push(self.coefficients.clone());
        out.push(self.base_weight.clone());
        out.push(self.spline_weight.clone());
    }

    /// Elementwise phi over any shape; gradients flow to the
    /// coefficients, both branch weights and the input.
    pub fn eval(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Tensor<T> {
        let grid = self.grid;
        let nb = grid.basis_count();
        let c = self.coefficients.on(tape);
        let bw = self.base_weight.on(tape);
        let sw = self.spline_weight.on(tape);

        let xd = x.data_arc();
        let cd = c.data_arc();
        let bwv = bw.data()[0];
        let swv = sw.data()[0];

        let mut vals = vec![T::zero(); nb];
        let out: Vec<T> = xd
            .iter()
            .map(|xi| {
                grid.basis_into(*xi, &mut vals, None);
                let spline = vals
                    .iter()
                    .zip(cd.iter())
                    .fold(T::zero(), |a, (b, cj)| a + *b * *cj);
                bwv * T::fl(silu(xi.as_f64())) + swv * spline
            })
            .collect();

        record_op(
            &[x, &c, &bw, &sw],
            Arc::new(out),
            x.shape().to_vec(),
            move |g, sink| {
                let mut gx = vec![T::zero(); xd.len()];
                let mut gc = vec![T::zero(); nb];
                let mut gbw = T::zero();
                let mut gsw = T::zero();
                let mut vals = vec![T::zero(); nb];
                let mut ders = vec![T::zero(); nb];
                for (i, xi) in xd.iter().enumerate() {
                    grid.basis_into(*xi, &mut vals, Some(&mut ders));
                    let gi = g[i];
                    let mut spline = T::zero();
                    let mut dspline = T::zero();
                    for j in 0..nb {
                        spline = spline + cd[j] * vals[j];
                        dspline = dspline + cd[j] * ders[j];
                        gc[j] = gc[j] + gi * swv * vals[j];
                    }
                    gbw = gbw + gi * T::fl(silu(xi.as_f64()));
                    gsw = gsw + gi * spline;
                    gx[i] = gi * (bwv * T::fl(silu_deriv(xi.as_f64())) + swv * dspline);
                }
                sink(0, gx);
                sink(1, gc);
                sink(2, vec![gbw]);
                sink(3, vec![gsw]);
            },
        )
    }
}

/// An n_in -> n_out KAN layer: out[t,q] = sum_p phi_{q,p}(in[t,p]).
/// Edge activations share the grid definition but carry independent
/// coefficients, packed as [n_out, n_in, basis] for the fused kernel.
pub struct KanLayer<T: Scalar> {
    pub n_in: usize,
    pub n_out: usize,
    pub grid: SplineGrid,
    pub coefficients: Param<T>,
    pub base_weight: Param<T>,
    pub spline_weight: Param<T>,
}

impl<T: Scalar> KanLayer<T> {
    /// Spline coefficients ~ N(0, (0.1/sqrt(G))^2), base weights
    /// Kaiming-style N(0, 1/n_in), spline weights 1. Deterministic under
    /// the rng state.
    pub fn init(
        name: &str,
        n_in: usize,
        n_out: usize,
        grid: SplineGrid,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(n_in > 0 && n_out > 0);
        let nb = grid.basis_count();
        let sigma = 0.1 / (grid.grid_size as f64).sqrt();
        let coeffs: Vec<T> = normal_vec::<T>(rng, n_out * n_in * nb)
            .into_iter()
            .map(|v| v * T::fl(sigma))
            .collect();
        let base_sigma = 1.0 / (n_in as f64).sqrt();
        let base: Vec<T> = normal_vec::<T>(rng, n_out * n_in)
            .into_iter()
            .map(|v| v * T::fl(base_sigma))
            .collect();
        KanLayer {
            n_in,
            n_out,
            grid,
            coefficients: Param::new(
                format!("{name}.coefficients"),
                coeffs,
                &[n_out, n_in, nb],
            ),
            base_weight: Param::new(format!("{name}.base_weight"), base, &[n_out, n_in]),
            spline_weight: Param::new(
                format!("{name}.spline_weight"),
                vec![T::one(); n_out * n_in],
                &[n_out, n_in],
            ),
        }
    }

    pub fn params(&self, out: &mut Vec<Param<T>>) {
        out.push(self.coefficients.clone());
        out.push(self.base_weight.clone());
        out.push(self.spline_weight.clone());
    }

    /// Apply the function matrix per token: [N, n_in] -> [N, n_out].
    pub fn forward(&self, tokens: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let (nt, width) = match tokens.shape() {
            [t, c] => (*t, *c),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "kan_layer_forward",
                    lhs: other.to_vec(),
                    rhs: vec![self.n_in],
                })
            }
        };
        if width != self.n_in {
            return Err(Error::ShapeMismatch {
                op: "kan_layer_forward",
                lhs: tokens.shape().to_vec(),
                rhs: vec![nt, self.n_in],
            });
        }
        let (n_in, n_out) = (self.n_in, self.n_out);
        let grid = self.grid;
        let nb = grid.basis_count();

        let c = self.coefficients.on(tape);
        let bw = self.base_weight.on(tape);
        let sw = self.spline_weight.on(tape);
        let xd = tokens.data_arc();
        let cd = c.data_arc();
        let bwd = bw.data_arc();
        let swd = sw.data_arc();

        let mut out = vec![T::zero(); nt * n_out];
        let mut basis = vec![T::zero(); n_in * nb];
        let mut silus = vec![T::zero(); n_in];
        for t in 0..nt {
            let row = &xd[t * n_in..(t + 1) * n_in];
            for p in 0..n_in {
                grid.basis_into(row[p], &mut basis[p * nb..(p + 1) * nb], None);
                silus[p] = T::fl(silu(row[p].as_f64()));
            }
            for q in 0..n_out {
                let mut acc = T::zero();
                for p in 0..n_in {
                    let e = q * n_in + p;
                    let cedge = &cd[e * nb..(e + 1) * nb];
                    let bvals = &basis[p * nb..(p + 1) * nb];
                    let mut spline = T::zero();
                    for j in 0..nb {
                        spline = spline + cedge[j] * bvals[j];
                    }
                    acc = acc + bwd[e] * silus[p] + swd[e] * spline;
                }
                out[t * n_out + q] = acc;
            }
        }

        Ok(record_op(
            &[tokens, &c, &bw, &sw],
            Arc::new(out),
            vec![nt, n_out],
            move |g, sink| {
                let mut gx = vec![T::zero(); nt * n_in];
                let mut gc = vec![T::zero(); n_out * n_in * nb];
                let mut gbw = vec![T::zero(); n_out * n_in];
                let mut gsw = vec![T::zero(); n_out * n_in];
                let mut basis = vec![T::zero(); n_in * nb];
                let mut ders = vec![T::zero(); n_in * nb];
                let mut silus = vec![T::zero(); n_in];
                let mut dsilus = vec![T::zero(); n_in];
                for t in 0..nt {
                    let row = &xd[t * n_in..(t + 1) * n_in];
                    for p in 0..n_in {
                        let (bs, ds) = (
                            &mut basis[p * nb..(p + 1) * nb],
                            &mut ders[p * nb..(p + 1) * nb],
                        );
                        grid.basis_into(row[p], bs, Some(ds));
                        silus[p] = T::fl(silu(row[p].as_f64()));
                        dsilus[p] = T::fl(silu_deriv(row[p].as_f64()));
                    }
                    for q in 0..n_out {
                        let gv = g[t * n_out + q];
                        if gv == T::zero() {
                            continue;
                        }
                        for p in 0..n_in {
                            let e = q * n_in + p;
                            let cedge = &cd[e * nb..(e + 1) * nb];
                            let bvals = &basis[p * nb..(p + 1) * nb];
                            let dvals = &ders[p * nb..(p + 1) * nb];
                            let gce = &mut gc[e * nb..(e + 1) * nb];
                            let mut spline = T::zero();
                            let mut dspline = T::zero();
                            for j in 0..nb {
                                spline = spline + cedge[j] * bvals[j];
                                dspline = dspline + cedge[j] * dvals[j];
                                gce[j] = gce[j] + gv * swd[e] * bvals[j];
                            }
                            gbw[e] = gbw[e] + gv * silus[p];
                            gsw[e] = gsw[e] + gv * spline;
                            gx[t * n_in + p] =
                                gx[t * n_in + p] + gv * (bwd[e] * dsilus[p] + swd[e] * dspline);
                        }
                    }
                }
                sink(0, gx);
                sink(1, gc);
                sink(2, gbw);
                sink(3, gsw);
            },
        ))
    }
}

/// N KAN layers interleaved with depthwise convolutions and per-stage
/// RMS normalization; channel count is preserved so the block output can
/// be residually added to its input.
pub struct KanBlock<T: Scalar> {
    pub channels: usize,
    pub layers: Vec<KanLayer<T>>,
    pub dwconvs: Vec<Param<T>>,
    pub norm_gamma: Vec<Param<T>>,
    pub norm_beta: Vec<Param<T>>,
}

impl<T: Scalar> KanBlock<T> {
    pub fn init(
        name: &str,
        channels: usize,
        n_layers: usize,
        grid: SplineGrid,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::new();
        let mut dwconvs = Vec::new();
        let mut norm_gamma = Vec::new();
        let mut norm_beta = Vec::new();
        for i in 0..n_layers {
            layers.push(KanLayer::init(
                &format!("{name}.layer{i}"),
                channels,
                channels,
                grid,
                rng,
            ));
            // near-identity depthwise kernels so gradients reach the
            // spline coefficients from step zero
            let mut kdata: Vec<T> = normal_vec::<T>(rng, channels * 9)
                .into_iter()
                .map(|v| v * T::fl(0.02))
                .collect();
            for ch in 0..channels {
                kdata[ch * 9 + 4] = kdata[ch * 9 + 4] + T::one();
            }
            dwconvs.push(Param::new(
                format!("{name}.dwconv{i}"),
                kdata,
                &[channels, 3, 3],
            ));
            norm_gamma.push(Param::new(
                format!("{name}.norm{i}.gamma"),
                vec![T::one(); channels],
                &[channels],
            ));
            norm_beta.push(Param::new(
                format!("{name}.norm{i}.beta"),
                vec![T::zero(); channels],
                &[channels],
            ));
        }
        KanBlock {
            channels,
            layers,
            dwconvs,
            norm_gamma,
            norm_beta,
        }
    }

    pub fn params(&self, out: &mut Vec<Param<T>>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.params(out);
            out.push(self.dwconvs[i].clone());
            out.push(self.norm_gamma[i].clone());
            out.push(self.norm_beta[i].clone());
        }
    }

    /// Tokenize, normalize, apply the KAN layer, re-assemble, depthwise
    /// convolve; repeat per stage (I_{i+1} = DwConv(Phi_i(I_i))); add the
    /// block input at the end.
    pub fn forward(&self, x: &Tensor<T>, tape: Option<&Tape<T>>) -> Result<Tensor<T>> {
        let (c, h, w) = match x.shape() {
            [c, h, w] => (*c, *h, *w),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "kan_block_forward",
                    lhs: other.to_vec(),
                    rhs: vec![self.channels],
                })
            }
        };
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "kan_block_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.channels, h, w],
            });
        }
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            let tokens = cur.chw_to_tokens()?;
            let gamma = self.norm_gamma[i].on(tape);
            let beta = self.norm_beta[i].on(tape);
            let normed = tokens.rms_norm_tokens(&gamma, &beta, 1e-6)?;
            let mapped = self.layers[i].forward(&normed, tape)?;
            let spatial = mapped.tokens_to_chw(h, w)?;
            cur = spatial.depthwise_conv2d(&self.dwconvs[i].on(tape))?;
        }
        cur.add(x)
    }
}
