//! 2-D convolutions: standard grouped-over-none conv and the depthwise
//! variant used inside KAN blocks. Inner loops are decomposed into
//! edge/interior ranges so the interior runs branch-free (and thus
//! vectorizes); correctness against a direct-loop reference is part of
//! the verify suite.

use std::sync::Arc;

use super::tape::record_op;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Padding fill for out-of-bounds taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Clamp coordinates to the image border (edge replication); keeps
    /// constant images constant under averaging kernels.
    Replicate,
}

#[inline]
fn tap(mode: PadMode, i: isize, n: usize) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(i.clamp(0, n as isize - 1) as usize),
    }
}

/// Output positions o (of n_out) whose tap o*stride + koff - pad lands
/// inside [0, n): half-open range, possibly empty.
#[inline]
fn interior(koff: usize, pad: usize, stride: usize, n: usize, n_out: usize) -> (usize, usize) {
    let lo = if koff >= pad {
        0
    } else {
        (pad - koff).div_ceil(stride)
    };
    let hi = if n + pad > koff {
        ((n - 1 + pad - koff) / stride + 1).min(n_out)
    } else {
        0
    };
    let lo = lo.min(n_out);
    (lo, hi.max(lo))
}

/// dst[o] += wval * src[o*stride + base] for o in 0..len, both slices
/// pre-offset. The stride-1 case is the hot path.
#[inline]
fn axpy_gather<T: Scalar>(dst: &mut [T], src: &[T], wval: T, stride: usize, len: usize) {
    if stride == 1 {
        for (d, s) in dst[..len].iter_mut().zip(&src[..len]) {
            *d = *d + wval * *s;
        }
    } else {
        for o in 0..len {
            dst[o] = dst[o] + wval * src[o * stride];
        }
    }
}

/// Reduction + scatter for the backward pass over one interior row:
/// returns sum(g[o] * src[o*stride]) and does gx[o*stride] += wval * g[o].
#[inline]
fn row_backward<T: Scalar>(
    g: &[T],
    src: &[T],
    gx: &mut [T],
    wval: T,
    stride: usize,
    len: usize,
) -> T {
    let mut wgrad = T::zero();
    if stride == 1 {
        for i in 0..len {
            let gv = g[i];
            wgrad = wgrad + gv * src[i];
            gx[i] = gx[i] + wval * gv;
        }
    } else {
        for o in 0..len {
            let gv = g[o];
            wgrad = wgrad + gv * src[o * stride];
            gx[o * stride] = gx[o * stride] + wval * gv;
        }
    }
    wgrad
}

struct ConvDims {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
    mode: PadMode,
}

fn conv_forward<T: Scalar>(xd: &[T], kd: &[T], d: &ConvDims) -> Vec<T> {
    let ConvDims {
        cin,
        cout,
        h,
        w,
        k,
        ho,
        wo,
        stride,
        padding,
        mode,
    } = *d;
    let mut out = vec![T::zero(); cout * ho * wo];
    for co in 0..cout {
        for ci in 0..cin {
            let xplane = &xd[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wval = kd[((co * cin + ci) * k + ky) * k + kx];
                    if wval == T::zero() {
                        continue;
                    }
                    let (xlo, xhi) = interior(kx, padding, stride, w, wo);
                    for oy in 0..ho {
                        let iy = match tap(mode, (oy * stride + ky) as isize - padding as isize, h)
                        {
                            Some(v) => v,
                            None => continue,
                        };
                        let orow = &mut out[co * ho * wo + oy * wo..co * ho * wo + (oy + 1) * wo];
                        let xrow = &xplane[iy * w..(iy + 1) * w];
                        if xhi > xlo {
                            let base = xlo * stride + kx - padding;
                            axpy_gather(
                                &mut orow[xlo..xhi],
                                &xrow[base..],
                                wval,
                                stride,
                                xhi - xlo,
                            );
                        }
                        if mode == PadMode::Replicate {
                            let left = wval * xrow[0];
                            for v in orow[..xlo].iter_mut() {
                                *v = *v + left;
                            }
                            let right = wval * xrow[w - 1];
                            for v in orow[xhi..].iter_mut() {
                                *v = *v + right;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward<T: Scalar>(xd: &[T], kd: &[T], g: &[T], d: &ConvDims) -> (Vec<T>, Vec<T>) {
    let ConvDims {
        cin,
        cout,
        h,
        w,
        k,
        ho,
        wo,
        stride,
        padding,
        mode,
    } = *d;
    let mut gx = vec![T::zero(); cin * h * w];
    let mut gk = vec![T::zero(); cout * cin * k * k];
    for co in 0..cout {
        for ci in 0..cin {
            let (xoff, goff) = (ci * h * w, co * ho * wo);
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let wval = kd[widx];
                    let mut wgrad = T::zero();
                    let (xlo, xhi) = interior(kx, padding, stride, w, wo);
                    for oy in 0..ho {
                        let iy = match tap(mode, (oy * stride + ky) as isize - padding as isize, h)
                        {
                            Some(v) => v,
                            None => continue,
                        };
                        let grow = &g[goff + oy * wo..goff + (oy + 1) * wo];
                        let (xrow, gxrow) = {
                            let r = xoff + iy * w;
                            (&xd[r..r + w], &mut gx[r..r + w])
                        };
                        if xhi > xlo {
                            let base = xlo * stride + kx - padding;
                            wgrad = wgrad
                                + row_backward(
                                    &grow[xlo..xhi],
                                    &xrow[base..],
                                    &mut gxrow[base..],
                                    wval,
                                    stride,
                                    xhi - xlo,
                                );
                        }
                        if mode == PadMode::Replicate {
                            let mut left = T::zero();
                            for gv in &grow[..xlo] {
                                left = left + *gv;
                            }
                            let mut right = T::zero();
                            for gv in &grow[xhi..] {
                                right = right + *gv;
                            }
                            wgrad = wgrad + left * xrow[0] + right * xrow[w - 1];
                            gxrow[0] = gxrow[0] + wval * left;
                            gxrow[w - 1] = gxrow[w - 1] + wval * right;
                        }
                    }
                    gk[widx] = gk[widx] + wgrad;
                }
            }
        }
    }
    (gx, gk)
}

impl<T: Scalar> Tensor<T> {
    /// input [C_in,H,W] * kernel [C_out,C_in,k,k] -> [C_out,H',W'] with
    /// H' = (H + 2*padding - k)/stride + 1. Kernel side k must be odd.
    pub fn conv2d(
        &self,
        kernel: &Tensor<T>,
        stride: usize,
        padding: usize,
        mode: PadMode,
    ) -> Result<Tensor<T>> {
        let (cin, h, w) = match self.shape() {
            [c, h, w] => (*c, *h, *w),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d input",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        let (cout, kc, kh, kw) = match kernel.shape() {
            [co, ci, kh, kw] => (*co, *ci, *kh, *kw),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d kernel",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if kc != cin || kh != kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        let k = kh;
        if k % 2 == 0 {
            return Err(Error::Contract {
                op: "conv2d",
                msg: format!("kernel side must be odd, got {k}"),
            });
        }
        if stride == 0 {
            return Err(Error::Contract {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        let hp = h + 2 * padding;
        let wp = w + 2 * padding;
        if hp < k || wp < k {
            return Err(Error::Contract {
                op: "conv2d",
                msg: format!(
                    "non-positive output extent for input {h}x{w}, kernel {k}, padding {padding}"
                ),
            });
        }
        let dims = ConvDims {
            cin,
            cout,
            h,
            w,
            k,
            ho: (hp - k) / stride + 1,
            wo: (wp - k) / stride + 1,
            stride,
            padding,
            mode,
        };

        let xd = self.data_arc();
        let kd = kernel.data_arc();
        let out = conv_forward(&xd, &kd, &dims);
        let (ho, wo) = (dims.ho, dims.wo);

        Ok(record_op(
            &[self, kernel],
            Arc::new(out),
            vec![cout, ho, wo],
            move |g, sink| {
                let (gx, gk) = conv_backward(&xd, &kd, g, &dims);
                sink(0, gx);
                sink(1, gk);
            },
        ))
    }

    /// Shape-preserving per-channel convolution: input [C,H,W], one k x k
    /// kernel per channel ([C,k,k]); output channel c depends only on
    /// input channel c. Replicate padding.
    pub fn depthwise_conv2d(&self, kernel: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = match self.shape() {
            [c, h, w] => (*c, *h, *w),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "depthwise_conv2d input",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        let (kc, kh, kw) = match kernel.shape() {
            [kc, kh, kw] => (*kc, *kh, *kw),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "depthwise_conv2d kernel",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if kc != c || kh != kw || kh % 2 == 0 {
            return Err(Error::ShapeMismatch {
                op: "depthwise_conv2d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        let k = kh;
        let padding = k / 2;
        let mode = PadMode::Replicate;

        let xd = self.data_arc();
        let kd = kernel.data_arc();
        // One channel at a time through the shared row kernels, with
        // cin = cout = 1 per plane.
        let dims = ConvDims {
            cin: 1,
            cout: 1,
            h,
            w,
            k,
            ho: h,
            wo: w,
            stride: 1,
            padding,
            mode,
        };
        let mut out = vec![T::zero(); c * h * w];
        for ch in 0..c {
            let plane = conv_forward(
                &xd[ch * h * w..(ch + 1) * h * w],
                &kd[ch * k * k..(ch + 1) * k * k],
                &dims,
            );
            out[ch * h * w..(ch + 1) * h * w].copy_from_slice(&plane);
        }

        Ok(record_op(
            &[self, kernel],
            Arc::new(out),
            vec![c, h, w],
            move |g, sink| {
                let mut gx = vec![T::zero(); c * h * w];
                let mut gk = vec![T::zero(); c * k * k];
                for ch in 0..c {
                    let (gxp, gkp) = conv_backward(
                        &xd[ch * h * w..(ch + 1) * h * w],
                        &kd[ch * k * k..(ch + 1) * k * k],
                        &g[ch * h * w..(ch + 1) * h * w],
                        &dims,
                    );
                    gx[ch * h * w..(ch + 1) * h * w].copy_from_slice(&gxp);
                    gk[ch * k * k..(ch + 1) * k * k].copy_from_slice(&gkp);
                }
                sink(0, gx);
                sink(1, gk);
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Depthwise conv must equal a full conv whose kernel is block
    /// diagonal: kernel[c][c'] is the depthwise tap for c == c' and zero
    /// otherwise.
    #[test]
    fn depthwise_equals_block_diagonal_full_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (c, h, w, k) = (3usize, 6usize, 5usize, 3usize);
        let x = Tensor::from_vec(crate::rng::normal_vec::<f64>(&mut rng, c * h * w), &[c, h, w]);
        let dk = crate::rng::normal_vec::<f64>(&mut rng, c * k * k);
        let dw_kernel = Tensor::from_vec(dk.clone(), &[c, k, k]);
        let mut full = vec![0.0f64; c * c * k * k];
        for ch in 0..c {
            for t in 0..k * k {
                full[((ch * c) + ch) * k * k + t] = dk[ch * k * k + t];
            }
        }
        let full_kernel = Tensor::from_vec(full, &[c, c, k, k]);
        let a = x.depthwise_conv2d(&dw_kernel).unwrap();
        let b = x.conv2d(&full_kernel, 1, k / 2, PadMode::Replicate).unwrap();
        assert_eq!(a.shape(), b.shape());
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn replicate_padding_preserves_constant_images() {
        let x = Tensor::full(&[1, 5, 5], 2.0f64);
        let kernel = Tensor::from_vec(vec![0.25f64; 9], &[1, 1, 3, 3]);
        let y = x.conv2d(&kernel, 1, 1, PadMode::Replicate).unwrap();
        for v in y.data() {
            assert!((v - 2.0 * 9.0 * 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::full(&[1, 4, 4], 1.0f64);
        let kernel = Tensor::full(&[1, 1, 2, 2], 1.0f64);
        assert!(x.conv2d(&kernel, 1, 0, PadMode::Zero).is_err());
    }

    #[test]
    fn stride_two_output_extent() {
        let x = Tensor::full(&[1, 7, 7], 1.0f64);
        let kernel = Tensor::full(&[2, 1, 3, 3], 0.1f64);
        let y = x.conv2d(&kernel, 2, 1, PadMode::Zero).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4]);
    }
}
