//! Dense n-dimensional arrays with reverse-mode automatic differentiation.
//!
//! Values are immutable after construction. Tracked operations append a
//! record to a per-forward-pass [`tape::Tape`]; [`tape::backward`] replays
//! the records in reverse and accumulates gradients into watched
//! [`param::Param`]s. The tape is discarded after one backward pass.

pub mod conv;
pub mod norm;
pub mod ops;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod shape_ops;
pub mod tape;

use std::sync::Arc;

pub use scalar::Scalar;
pub use tape::Tape;

use crate::error::{Error, Result};

#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    /// Present iff this value participates in a recorded computation.
    node: Option<(Tape<T>, usize)>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(vec![v], &[1])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor::from_vec(vec![v; shape.iter().product()], shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Extract the single element of a scalar tensor.
    pub fn item(&self) -> T {
        assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&(Tape<T>, usize)> {
        self.node.as_ref()
    }

    pub(crate) fn with_node(mut self, tape: Tape<T>, id: usize) -> Self {
        self.node = Some((tape, id));
        self
    }

    /// Same value, cut off from the computation record.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Reinterpret the buffer under a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            node: None,
        };
        Ok(match &self.node {
            None => out,
            Some(_) => {
                let n = self.len();
                tape::record_op(&[self], out.data_arc(), shape.to_vec(), move |g, sink| {
                    debug_assert_eq!(g.len(), n);
                    sink(0, g.to_vec());
                })
            }
        })
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max)
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}
