//! Layout ops used by the U-Net: channel concat, nearest upsampling,
//! CHW <-> token transposes, zero padding.

use std::sync::Arc;

use super::tape::record_op;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn expect_rank3<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::ShapeMismatch {
            op,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

impl<T: Scalar> Tensor<T> {
    /// Concatenate along the channel axis: [C1,H,W] ++ [C2,H,W].
    pub fn concat_channels(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (c1, h, w) = expect_rank3("concat_channels", self)?;
        let (c2, h2, w2) = expect_rank3("concat_channels", rhs)?;
        if (h, w) != (h2, w2) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity((c1 + c2) * h * w);
        out.extend_from_slice(self.data());
        out.extend_from_slice(rhs.data());
        let n1 = c1 * h * w;
        let n2 = c2 * h * w;
        Ok(record_op(
            &[self, rhs],
            Arc::new(out),
            vec![c1 + c2, h, w],
            move |g, sink| {
                sink(0, g[..n1].to_vec());
                sink(1, g[n1..n1 + n2].to_vec());
            },
        ))
    }

    /// Nearest-neighbor 2x spatial upsampling.
    pub fn upsample_nearest2x(&self) -> Result<Tensor<T>> {
        let (c, h, w) = expect_rank3("upsample_nearest2x", self)?;
        let d = self.data_arc();
        let (h2, w2) = (h * 2, w * 2);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for x in 0..w2 {
                    out[(ch * h2 + y) * w2 + x] = d[(ch * h + y / 2) * w + x / 2];
                }
            }
        }
        Ok(record_op(
            &[self],
            Arc::new(out),
            vec![c, h2, w2],
            move |g, sink| {
                let mut gi = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..h2 {
                        for x in 0..w2 {
                            let src = (ch * h + y / 2) * w + x / 2;
                            gi[src] = gi[src] + g[(ch * h2 + y) * w2 + x];
                        }
                    }
                }
                sink(0, gi);
            },
        ))
    }

    /// [C,H,W] -> [H*W, C] per-pixel token matrix.
    pub fn chw_to_tokens(&self) -> Result<Tensor<T>> {
        let (c, h, w) = expect_rank3("chw_to_tokens", self)?;
        let d = self.data_arc();
        let hw = h * w;
        let mut out = vec![T::zero(); hw * c];
        for ch in 0..c {
            for p in 0..hw {
                out[p * c + ch] = d[ch * hw + p];
            }
        }
        Ok(record_op(
            &[self],
            Arc::new(out),
            vec![hw, c],
            move |g, sink| {
                let mut gi = vec![T::zero(); c * hw];
                for ch in 0..c {
                    for p in 0..hw {
                        gi[ch * hw + p] = g[p * c + ch];
                    }
                }
                sink(0, gi);
            },
        ))
    }

    /// [H*W, C] token matrix -> [C,H,W].
    pub fn tokens_to_chw(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let (hw, c) = match self.shape() {
            [t, c] => (*t, *c),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "tokens_to_chw",
                    lhs: other.to_vec(),
                    rhs: vec![h * w],
                })
            }
        };
        if hw != h * w {
            return Err(Error::ShapeMismatch {
                op: "tokens_to_chw",
                lhs: self.shape().to_vec(),
                rhs: vec![h * w, c],
            });
        }
        let d = self.data_arc();
        let mut out = vec![T::zero(); c * hw];
        for ch in 0..c {
            for p in 0..hw {
                out[ch * hw + p] = d[p * c + ch];
            }
        }
        Ok(record_op(
            &[self],
            Arc::new(out),
            vec![c, h, w],
            move |g, sink| {
                let mut gi = vec![T::zero(); hw * c];
                for ch in 0..c {
                    for p in 0..hw {
                        gi[p * c + ch] = g[ch * hw + p];
                    }
                }
                sink(0, gi);
            },
        ))
    }

    /// Zero-pad spatially to [C, h2, w2], original at the top-left corner.
    pub fn pad2d_zero(&self, h2: usize, w2: usize) -> Result<Tensor<T>> {
        let (c, h, w) = expect_rank3("pad2d_zero", self)?;
        if h2 < h || w2 < w {
            return Err(Error::Contract {
                op: "pad2d_zero",
                msg: format!("target {h2}x{w2} smaller than input {h}x{w}"),
            });
        }
        let d = self.data_arc();
        let mut out = vec![T::zero(); c * h2 * w2];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(ch * h2 + y) * w2 + x] = d[(ch * h + y) * w + x];
                }
            }
        }
        Ok(record_op(
            &[self],
            Arc::new(out),
            vec![c, h2, w2],
            move |g, sink| {
                let mut gi = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            gi[(ch * h + y) * w + x] = g[(ch * h2 + y) * w2 + x];
                        }
                    }
                }
                sink(0, gi);
            },
        ))
    }
}
