//! Wengert-style computation record. Forward ops append nodes; backward
//! replays them in reverse order (a valid topological order for an
//! append-only tape), visiting each recorded operation at most once.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use super::param::Param;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Sink receiving (parent node id, gradient contribution).
pub(crate) type GradFn<'a, T> = dyn FnMut(usize, Vec<T>) + 'a;

type BackFn<T> = Box<dyn FnOnce(&[T], &mut GradFn<'_, T>)>;

struct Node<T: Scalar> {
    len: usize,
    back: Option<BackFn<T>>,
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    watched: Vec<(usize, Param<T>)>,
}

/// One forward pass worth of recorded operations.
pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                watched: Vec::new(),
            })),
        }
    }

    fn same_tape(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, len: usize, back: BackFn<T>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            len,
            back: Some(back),
        });
        inner.nodes.len() - 1
    }

    /// Register a tensor as a tracked leaf.
    pub fn leaf(&self, t: &Tensor<T>) -> Tensor<T> {
        let id = self.push(t.len(), Box::new(|_, _| {}));
        t.detach().with_node(self.clone(), id)
    }

    /// Register a parameter as a tracked leaf; its gradient is written
    /// back after [`backward`] unless the parameter is frozen.
    pub fn watch(&self, p: &Param<T>) -> Tensor<T> {
        let t = p.value();
        let leaf = self.leaf(&t);
        let id = leaf.node().expect("leaf is tracked").1;
        self.inner.borrow_mut().watched.push((id, p.clone()));
        leaf
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }
}

/// Gradients of one backward pass, queryable by tensor for tests and
/// finite-difference checks.
pub struct Gradients<T: Scalar> {
    slots: Vec<Option<Vec<T>>>,
    tape: Tape<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `t`, if `t` was tracked on
    /// this tape and reached by the backward sweep.
    pub fn wrt(&self, t: &Tensor<T>) -> Option<&[T]> {
        let (tape, id) = t.node()?;
        if !tape.same_tape(&self.tape) {
            return None;
        }
        self.slots.get(*id)?.as_deref()
    }
}

/// Reverse sweep from a scalar loss. Accumulates `d loss / d p` into every
/// watched, unfrozen parameter and returns the full gradient store.
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<Gradients<T>> {
    if !loss.is_scalar() {
        return Err(Error::Contract {
            op: "backward",
            msg: format!("loss must be scalar, got shape {:?}", loss.shape()),
        });
    }
    let (tape, loss_id) = loss
        .node()
        .ok_or_else(|| Error::Contract {
            op: "backward",
            msg: "loss is not reachable from any tracked parameter".into(),
        })?
        .clone();

    let n = tape.num_nodes();
    let mut slots: Vec<Option<Vec<T>>> = vec![None; n];
    slots[loss_id] = Some(vec![T::one()]);

    {
        let mut inner = tape.inner.borrow_mut();
        let lens: Vec<usize> = inner.nodes.iter().map(|nd| nd.len).collect();
        for id in (0..=loss_id).rev() {
            if slots[id].is_none() {
                continue;
            }
            let Some(back) = inner.nodes[id].back.take() else {
                continue;
            };
            let g = slots[id].take().expect("present");
            {
                let mut sink = |pid: usize, contrib: Vec<T>| {
                    debug_assert_eq!(contrib.len(), lens[pid], "grad len for node {pid}");
                    match &mut slots[pid] {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(contrib) {
                                *a = *a + c;
                            }
                        }
                        slot @ None => *slot = Some(contrib),
                    }
                };
                back(&g, &mut sink);
            }
            slots[id] = Some(g);
        }

        for (id, p) in &inner.watched {
            if let Some(g) = &slots[*id] {
                if !p.frozen() {
                    p.accumulate_grad(g);
                }
            }
        }
    }

    Ok(Gradients { slots, tape })
}

/// Record one operation. `back` receives the output gradient and a sink
/// keyed by input position. Returns an untracked tensor when no input is
/// tracked.
pub(crate) fn record_op<T, F>(
    inputs: &[&Tensor<T>],
    out_data: Arc<Vec<T>>,
    out_shape: Vec<usize>,
    back: F,
) -> Tensor<T>
where
    T: Scalar,
    F: FnOnce(&[T], &mut dyn FnMut(usize, Vec<T>)) + 'static,
{
    let mut tape: Option<Tape<T>> = None;
    let parents: Vec<Option<usize>> = inputs
        .iter()
        .map(|t| match t.node() {
            None => None,
            Some((tp, id)) => {
                match &tape {
                    None => tape = Some(tp.clone()),
                    Some(existing) => {
                        assert!(existing.same_tape(tp), "inputs recorded on different tapes")
                    }
                }
                Some(*id)
            }
        })
        .collect();

    let out = Tensor {
        shape: out_shape,
        data: out_data,
        node: None,
    };
    match tape {
        None => out,
        Some(tape) => {
            let len = out.len();
            let back_fn: BackFn<T> = Box::new(move |g, sink| {
                let mut adapter = |i: usize, contrib: Vec<T>| {
                    if let Some(pid) = parents[i] {
                        sink(pid, contrib);
                    }
                };
                back(g, &mut adapter);
            });
            let id = tape.push(len, back_fn);
            out.with_node(tape, id)
        }
    }
}
