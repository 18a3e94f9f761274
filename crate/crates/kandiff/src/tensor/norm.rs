//! Fused normalization ops with analytic backward passes: group norm for
//! conv stages, per-token RMS norm ahead of KAN layers (keeps spline
//! inputs inside the grid domain).

use std::sync::Arc;

use super::tape::record_op;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tensor<T> {
    /// Group normalization over [C,H,W] with per-channel scale/shift.
    pub fn group_norm(
        &self,
        groups: usize,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: f64,
    ) -> Result<Tensor<T>> {
        let (c, h, w) = match self.shape() {
            [c, h, w] => (*c, *h, *w),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "group_norm",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if groups == 0 || c % groups != 0 {
            return Err(Error::Contract {
                op: "group_norm",
                msg: format!("groups {groups} must divide channels {c}"),
            });
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "group_norm scale/shift",
                lhs: gamma.shape().to_vec(),
                rhs: vec![c],
            });
        }
        let xd = self.data_arc();
        let gd = gamma.data_arc();
        let bd = beta.data_arc();
        let cg = c / groups;
        let m = cg * h * w;
        let hw = h * w;
        let inv_m = T::fl(1.0 / m as f64);
        let epsv = T::fl(eps);

        let mut xhat = vec![T::zero(); c * hw];
        let mut inv_std = vec![T::zero(); groups];
        let mut out = vec![T::zero(); c * hw];
        for g in 0..groups {
            let base = g * cg * hw;
            let slice = &xd[base..base + m];
            let mean = slice.iter().fold(T::zero(), |a, v| a + *v) * inv_m;
            let var = slice
                .iter()
                .fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean))
                * inv_m;
            let s = T::one() / (var + epsv).sqrt();
            inv_std[g] = s;
            for j in 0..m {
                let ch = (base + j) / hw;
                let xh = (slice[j] - mean) * s;
                xhat[base + j] = xh;
                out[base + j] = gd[ch] * xh + bd[ch];
            }
        }

        let xhat = Arc::new(xhat);
        Ok(record_op(
            &[self, gamma, beta],
            Arc::new(out),
            vec![c, h, w],
            move |gout, sink| {
                let mut gx = vec![T::zero(); c * hw];
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for (i, gv) in gout.iter().enumerate() {
                    let ch = i / hw;
                    ggamma[ch] = ggamma[ch] + *gv * xhat[i];
                    gbeta[ch] = gbeta[ch] + *gv;
                }
                for g in 0..groups {
                    let base = g * cg * hw;
                    // d = gout * gamma, per element of the group
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..m {
                        let ch = (base + j) / hw;
                        let d = gout[base + j] * gd[ch];
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * xhat[base + j];
                    }
                    let mean_d = sum_d * inv_m;
                    let mean_dx = sum_dx * inv_m;
                    for j in 0..m {
                        let ch = (base + j) / hw;
                        let d = gout[base + j] * gd[ch];
                        gx[base + j] = inv_std[g] * (d - mean_d - xhat[base + j] * mean_dx);
                    }
                }
                sink(0, gx);
                sink(1, ggamma);
                sink(2, gbeta);
            },
        ))
    }

    /// Per-token RMS normalization over [N,C] with per-channel scale/shift.
    pub fn rms_norm_tokens(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: f64,
    ) -> Result<Tensor<T>> {
        let (n, c) = match self.shape() {
            [n, c] => (*n, *c),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "rms_norm_tokens",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "rms_norm_tokens scale/shift",
                lhs: gamma.shape().to_vec(),
                rhs: vec![c],
            });
        }
        let xd = self.data_arc();
        let gd = gamma.data_arc();
        let bd = beta.data_arc();
        let inv_c = T::fl(1.0 / c as f64);
        let epsv = T::fl(eps);

        let mut out = vec![T::zero(); n * c];
        let mut inv_rms = vec![T::zero(); n];
        for t in 0..n {
            let row = &xd[t * c..(t + 1) * c];
            let ms = row.iter().fold(T::zero(), |a, v| a + *v * *v) * inv_c;
            let r = T::one() / (ms + epsv).sqrt();
            inv_rms[t] = r;
            for j in 0..c {
                out[t * c + j] = gd[j] * row[j] * r + bd[j];
            }
        }

        Ok(record_op(
            &[self, gamma, beta],
            Arc::new(out),
            vec![n, c],
            move |gout, sink| {
                let mut gx = vec![T::zero(); n * c];
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for t in 0..n {
                    let row = &xd[t * c..(t + 1) * c];
                    let r = inv_rms[t];
                    let mut sum_dx = T::zero();
                    for j in 0..c {
                        let d = gout[t * c + j] * gd[j];
                        sum_dx = sum_dx + d * row[j];
                        ggamma[j] = ggamma[j] + gout[t * c + j] * row[j] * r;
                        gbeta[j] = gbeta[j] + gout[t * c + j];
                    }
                    let coef = sum_dx * inv_c * r * r * r;
                    for j in 0..c {
                        let d = gout[t * c + j] * gd[j];
                        gx[t * c + j] = d * r - row[j] * coef;
                    }
                }
                sink(0, gx);
                sink(1, ggamma);
                sink(2, gbeta);
            },
        ))
    }
}
