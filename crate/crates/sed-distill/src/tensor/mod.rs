//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to a shared buffer of
//! `f64` values plus an optional graph node recording the producing
//! operation. Calling [`Tensor::backward`] on a scalar walks the graph
//! in reverse topological order and accumulates gradients into every
//! reachable tensor with `requires_grad` set.

mod conv;
mod gradcheck;
pub mod gru;
pub mod norm;
mod ops;

pub use gradcheck::{finite_diff_gradcheck, nudge_away_from_zero};
pub use gru::{GruDirection, GruParams};
pub use norm::{BatchNormState, Mode, BN_EPS, BN_MOMENTUM};

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, SedError};

/// Gradient contributions for each input of an op, aligned with the
/// node's input list. `None` means the rule produces no gradient for
/// that input (e.g. a constant operand).
type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct GraphNode {
    pub op_kind: &'static str,
    pub inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    node: Option<GraphNode>,
}

/// Handle to a dense n-dimensional tensor participating in a
/// reverse-mode computation graph. Cloning shares the buffer.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .field("op", &inner.node.as_ref().map(|n| n.op_kind))
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(SedError::Dimension(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape: shape.to_vec(),
                data,
                grad: None,
                requires_grad: false,
                node: None,
            })),
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v], &[1]).unwrap()
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(vec![0.0; numel], shape).unwrap()
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(vec![v; numel], shape).unwrap()
    }

    /// A leaf tensor that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn data(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.inner.borrow_mut().requires_grad = v;
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the buffer in place (optimizer updates). Shape must match.
    pub fn set_data(&self, data: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    /// Same values, no graph, no gradient.
    pub fn detach(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::from_vec(inner.data.clone(), &inner.shape).unwrap()
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    pub(crate) fn make_op(
        op_kind: &'static str,
        inputs: Vec<Tensor>,
        data: Vec<f64>,
        shape: Vec<usize>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let node = if requires_grad {
            Some(GraphNode {
                op_kind,
                inputs,
                backward,
            })
        } else {
            None
        };
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad,
                node,
            })),
        }
    }

    fn accumulate_grad(&self, contribution: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        match &mut inner.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => inner.grad = Some(contribution.to_vec()),
        }
    }

    /// Reverse-mode backward pass from a scalar loss. Gradients
    /// accumulate additively across repeated calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(SedError::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS; GRU graphs are deep enough to
        // overflow the stack with a recursive walk.
        let mut order: Vec<Tensor> = Vec::new();
        let mut state: HashMap<usize, u8> = HashMap::new(); // 1 = entered, 2 = done
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, children_done)) = stack.pop() {
            let id = t.ptr_id();
            if children_done {
                state.insert(id, 2);
                order.push(t);
                continue;
            }
            match state.get(&id) {
                Some(_) => continue,
                None => {
                    state.insert(id, 1);
                    stack.push((t.clone(), true));
                    let inner = t.inner.borrow();
                    if let Some(node) = &inner.node {
                        for input in &node.inputs {
                            if state.get(&input.ptr_id()).is_none() && input.requires_grad() {
                                stack.push((input.clone(), false));
                            }
                        }
                    }
                }
            }
        }

        // Per-call gradient buffers; flushed into the tensors at the
        // end so repeated backward calls accumulate without the
        // intermediate grads of earlier calls re-entering propagation.
        let mut flowing: HashMap<usize, Vec<f64>> = HashMap::new();
        flowing.insert(self.ptr_id(), vec![1.0]);

        for t in order.iter().rev() {
            let grad = match flowing.get(&t.ptr_id()) {
                Some(g) => g.clone(),
                None => continue,
            };
            let inner = t.inner.borrow();
            let node = match &inner.node {
                Some(n) => n,
                None => continue,
            };
            let contributions = (node.backward)(&grad);
            debug_assert_eq!(contributions.len(), node.inputs.len());
            for (input, contribution) in node.inputs.iter().zip(contributions) {
                if let Some(c) = contribution {
                    if input.requires_grad() {
                        debug_assert_eq!(c.len(), input.numel());
                        let slot = flowing
                            .entry(input.ptr_id())
                            .or_insert_with(|| vec![0.0; c.len()]);
                        for (s, v) in slot.iter_mut().zip(&c) {
                            *s += v;
                        }
                    }
                }
            }
        }

        for t in &order {
            if let Some(g) = flowing.get(&t.ptr_id()) {
                t.accumulate_grad(g);
            }
        }
        Ok(())
    }
}

pub(crate) fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SedError::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
