//! Elementwise ops (trailing-dimension broadcasting), reductions, matmul.

use std::sync::Arc;

use super::tape::record_op;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Trailing-dimension broadcast of two shapes, or None if incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Strides of `shape` viewed under `out_shape`, zero on broadcast axes.
fn bcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = row_major_strides(shape);
    let rank = out_shape.len();
    let offset = rank - shape.len();
    (0..rank)
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Call f(out_index, a_index, b_index) for every element of the broadcast
/// output, odometer-style.
fn for_each_pair(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for k in 0..n {
        f(k, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary<T: Scalar>(
    name: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: fn(T, T) -> T,
    // partial derivatives (d/da, d/db) at (x, y)
    df: fn(T, T) -> (T, T),
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or(Error::ShapeMismatch {
        op: name,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let ad = a.data_arc();
    let bd = b.data_arc();
    let mut out = vec![T::zero(); out_shape.iter().product()];
    if a.shape() == b.shape() {
        for (o, (x, y)) in out.iter_mut().zip(ad.iter().zip(bd.iter())) {
            *o = f(*x, *y);
        }
    } else {
        let sa = bcast_strides(a.shape(), &out_shape);
        let sb = bcast_strides(b.shape(), &out_shape);
        for_each_pair(&out_shape, &sa, &sb, |k, ia, ib| out[k] = f(ad[ia], bd[ib]));
    }

    let a_shape = a.shape().to_vec();
    let b_shape = b.shape().to_vec();
    let os = out_shape.clone();
    Ok(record_op(
        &[a, b],
        Arc::new(out),
        out_shape,
        move |g, sink| {
            let mut ga = vec![T::zero(); ad.len()];
            let mut gb = vec![T::zero(); bd.len()];
            if a_shape == b_shape {
                for k in 0..g.len() {
                    let (da, db) = df(ad[k], bd[k]);
                    ga[k] = ga[k] + g[k] * da;
                    gb[k] = gb[k] + g[k] * db;
                }
            } else {
                let sa = bcast_strides(&a_shape, &os);
                let sb = bcast_strides(&b_shape, &os);
                for_each_pair(&os, &sa, &sb, |k, ia, ib| {
                    let (da, db) = df(ad[ia], bd[ib]);
                    ga[ia] = ga[ia] + g[k] * da;
                    gb[ib] = gb[ib] + g[k] * db;
                });
            }
            sink(0, ga);
            sink(1, gb);
        },
    ))
}

pub(crate) fn unary<T: Scalar>(
    a: &Tensor<T>,
    f: fn(T) -> T,
    // dy/dx at (x, y)
    df: fn(T, T) -> T,
) -> Tensor<T> {
    let ad = a.data_arc();
    let out: Vec<T> = ad.iter().map(|x| f(*x)).collect();
    let out_arc = Arc::new(out);
    let out_capture = Arc::clone(&out_arc);
    record_op(&[a], out_arc, a.shape().to_vec(), move |g, sink| {
        let ga: Vec<T> = (0..g.len())
            .map(|k| g[k] * df(ad[k], out_capture[k]))
            .collect();
        sink(0, ga);
    })
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary("add", self, rhs, |x, y| x + y, |_, _| (T::one(), T::one()))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary("sub", self, rhs, |x, y| x - y, |_, _| (T::one(), -T::one()))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary("mul", self, rhs, |x, y| x * y, |x, y| (y, x))
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        binary(
            "div",
            self,
            rhs,
            |x, y| x / y,
            |x, y| (T::one() / y, -x / (y * y)),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, |x| -x, |_, _| -T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        unary(self, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary(
            self,
            |x| x.sqrt(),
            |_, y| T::one() / (T::fl(2.0) * y),
        )
    }

    pub fn abs(&self) -> Tensor<T> {
        unary(
            self,
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sin(&self) -> Tensor<T> {
        unary(self, |x| x.sin(), |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor<T> {
        unary(self, |x| x.cos(), |x, _| -x.sin())
    }

    /// x * sigmoid(x). Derivative at 0 is exactly 1/2.
    pub fn silu(&self) -> Tensor<T> {
        unary(
            self,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    pub fn add_scalar(&self, v: T) -> Tensor<T> {
        self.add(&Tensor::scalar(v)).expect("scalar broadcasts")
    }

    pub fn mul_scalar(&self, v: T) -> Tensor<T> {
        self.mul(&Tensor::scalar(v)).expect("scalar broadcasts")
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let ad = self.data_arc();
        let total = ad.iter().fold(T::zero(), |acc, x| acc + *x);
        let n = ad.len();
        record_op(&[self], Arc::new(vec![total]), vec![1], move |g, sink| {
            sink(0, vec![g[0]; n]);
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.len();
        self.sum_all().mul_scalar(T::one() / T::fl(n as f64))
    }

    /// [M,K] x [K,N] -> [M,N].
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || rhs.shape().len() != 2 || self.shape()[1] != rhs.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = rhs.shape()[1];
        let ad = self.data_arc();
        let bd = rhs.data_arc();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let a = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + a * brow[j];
                }
            }
        }
        Ok(record_op(
            &[self, rhs],
            Arc::new(out),
            vec![m, n],
            move |g, sink| {
                // ga = g . b^T
                let mut ga = vec![T::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = T::zero();
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &bd[p * n..(p + 1) * n];
                        for j in 0..n {
                            acc = acc + grow[j] * brow[j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                // gb = a^T . g
                let mut gb = vec![T::zero(); k * n];
                for i in 0..m {
                    for p in 0..k {
                        let a = ad[i * k + p];
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &mut gb[p * n..(p + 1) * n];
                        for j in 0..n {
                            brow[j] = brow[j] + a * grow[j];
                        }
                    }
                }
                sink(0, ga);
                sink(1, gb);
            },
        ))
    }
}

/// Op tags for the generic elementwise entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Silu,
}

/// Dispatch an elementwise op by tag. Binary tags require `b`.
pub fn elementwise<T: Scalar>(
    op: ElemOp,
    a: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    use ElemOp::*;
    fn need_b<'t, T: Scalar>(op: ElemOp, b: Option<&'t Tensor<T>>) -> Result<&'t Tensor<T>> {
        b.ok_or(Error::Contract {
            op: "elementwise",
            msg: format!("{op:?} requires a second operand"),
        })
    }
    Ok(match op {
        Add => a.add(need_b(op, b)?)?,
        Sub => a.sub(need_b(op, b)?)?,
        Mul => a.mul(need_b(op, b)?)?,
        Div => a.div(need_b(op, b)?)?,
        Neg => a.neg(),
        Exp => a.exp(),
        Log => a.ln(),
        Sqrt => a.sqrt(),
        Abs => a.abs(),
        Sin => a.sin(),
        Cos => a.cos(),
        Silu => a.silu(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[3, 1], &[1, 4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn matmul_hand_2x2() {
        let a = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0], &[2, 2]);
        let b = Tensor::from_vec(vec![5.0f64, 6.0, 7.0, 8.0], &[2, 2]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    proptest! {
        #[test]
        fn add_commutes_under_broadcast(
            a in proptest::collection::vec(-10.0f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let ta = Tensor::from_vec(a, &[3, 1]);
            let tb = Tensor::from_vec(b, &[3, 4]);
            let ab = ta.add(&tb).unwrap();
            let ba = tb.add(&ta).unwrap();
            prop_assert_eq!(ab.shape(), &[3usize, 4]);
            prop_assert_eq!(ab.data(), ba.data());
        }

        #[test]
        fn add_then_sub_is_identity(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            b in proptest::collection::vec(-10.0f64..10.0, 8),
        ) {
            let ta = Tensor::from_vec(a.clone(), &[8]);
            let tb = Tensor::from_vec(b, &[8]);
            let r = ta.add(&tb).unwrap().sub(&tb).unwrap();
            for (x, y) in r.data().iter().zip(&a) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn mul_scalar_matches_mul_broadcast(
            a in proptest::collection::vec(-10.0f64..10.0, 6),
            s in -5.0f64..5.0,
        ) {
            let ta = Tensor::from_vec(a, &[2, 3]);
            let by_scalar = ta.mul_scalar(s);
            let by_tensor = ta.mul(&Tensor::scalar(s)).unwrap();
            prop_assert_eq!(by_scalar.data(), by_tensor.data());
        }
    }
}
