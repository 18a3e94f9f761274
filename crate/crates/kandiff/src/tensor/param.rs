use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use super::{Scalar, Tape, Tensor};

struct ParamInner<T: Scalar> {
    name: String,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    grad: Vec<T>,
    frozen: bool,
}

/// A named learnable tensor. Gradients accumulate across backward passes
/// until [`Param::zero_grad`]; frozen parameters receive no gradient
/// writes and are skipped by the optimizer.
pub struct Param<T: Scalar>(Rc<RefCell<ParamInner<T>>>);

impl<T: Scalar> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param(Rc::clone(&self.0))
    }
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, data: Vec<T>, shape: &[usize]) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        let n = data.len();
        Param(Rc::new(RefCell::new(ParamInner {
            name: name.into(),
            shape: shape.to_vec(),
            data: Arc::new(data),
            grad: vec![T::zero(); n],
            frozen: false,
        })))
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Param::new(name, vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn name(&self) -> String {
        self.0.borrow().name.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Untracked snapshot of the current value.
    pub fn value(&self) -> Tensor<T> {
        let inner = self.0.borrow();
        Tensor {
            shape: inner.shape.clone(),
            data: Arc::clone(&inner.data),
            node: None,
        }
    }

    /// Tracked view on the given tape; gradients will flow back here.
    pub fn tracked(&self, tape: &Tape<T>) -> Tensor<T> {
        tape.watch(self)
    }

    /// Tracked if a tape is supplied, plain value otherwise.
    pub fn on(&self, tape: Option<&Tape<T>>) -> Tensor<T> {
        match tape {
            Some(tp) => self.tracked(tp),
            None => self.value(),
        }
    }

    pub fn grad(&self) -> Vec<T> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        for g in self.0.borrow_mut().grad.iter_mut() {
            *g = T::zero();
        }
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut inner = self.0.borrow_mut();
        debug_assert_eq!(g.len(), inner.grad.len());
        for (a, c) in inner.grad.iter_mut().zip(g) {
            *a = *a + *c;
        }
    }

    pub fn frozen(&self) -> bool {
        self.0.borrow().frozen
    }

    pub fn set_frozen(&self, frozen: bool) {
        self.0.borrow_mut().frozen = frozen;
    }

    /// Overwrite the value in place (optimizer step, checkpoint load).
    pub fn set_data(&self, data: Vec<T>) {
        let mut inner = self.0.borrow_mut();
        assert_eq!(data.len(), inner.data.len(), "param {}", inner.name);
        inner.data = Arc::new(data);
    }

    /// Apply `f` to each (value, grad) pair, mutating the value.
    pub fn update_with(&self, mut f: impl FnMut(&mut T, T)) {
        let mut inner = self.0.borrow_mut();
        let grad = inner.grad.clone();
        let data = Arc::make_mut(&mut inner.data);
        for (v, g) in data.iter_mut().zip(grad) {
            f(v, g);
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Param<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.0.borrow();
        f.debug_struct("Param")
            .field("name", &inner.name)
            .field("shape", &inner.shape)
            .field("frozen", &inner.frozen)
            .finish()
    }
}
