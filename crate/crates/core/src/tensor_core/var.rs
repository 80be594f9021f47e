//! Reverse-mode automatic differentiation.
//!
//! A [`Var`] wraps a [`Tensor`] value together with the operation that
//! produced it. Calling [`Var::backward`] on a scalar walks the recorded graph
//! in reverse creation order. Intermediate gradients are transient; only leaf
//! variables created with `requires_grad` keep (and accumulate) their gradient.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Computes the gradient for each parent from the output gradient.
///
/// Arguments are `(output_grad, parents, output_value)`.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[Var<T>], &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    grad: RefCell<Option<Tensor<T>>>,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

pub struct Var<T: Scalar = f32>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    fn with(value: Tensor<T>, requires_grad: bool, parents: Vec<Var<T>>, backward: Option<BackwardFn<T>>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward,
        }))
    }

    /// Leaf that receives gradients.
    pub fn param(value: Tensor<T>) -> Self {
        Self::with(value, true, Vec::new(), None)
    }

    /// Leaf treated as a constant.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::with(value, false, Vec::new(), None)
    }

    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Self::with(value, requires_grad, Vec::new(), None)
    }

    /// Result of an operation. The backward closure is only kept when some
    /// parent needs a gradient.
    pub(crate) fn from_op(value: Tensor<T>, parents: &[&Var<T>], backward: BackwardFn<T>) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::with(
                value,
                true,
                parents.iter().map(|&p| p.clone()).collect(),
                Some(backward),
            )
        } else {
            Self::with(value, false, Vec::new(), None)
        }
    }

    #[inline]
    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn take_grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Detached copy of the value: same data, no history.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Populate gradients of every reachable leaf with `d self / d leaf`.
    ///
    /// Leaf gradients accumulate across calls until cleared.
    pub fn backward(&self) -> Result<()> {
        if !self.value().shape().is_empty() {
            return Err(Error::NonScalarLoss(self.value().shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut order: Vec<Var<T>> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || seen.insert(v.0.id, ()).is_some() {
                continue;
            }
            stack.extend(v.0.parents.iter().cloned());
            order.push(v);
        }
        // A node is always created after its parents.
        order.sort_unstable_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
        grads.insert(self.0.id, Tensor::scalar(T::one()));
        for node in &order {
            let Some(g) = grads.remove(&node.0.id) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.add_assign(&g)?,
                        None => *slot = Some(g),
                    }
                }
                Some(backward) => {
                    let parent_grads = backward(&g, &node.0.parents, &node.0.value)?;
                    for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), parent.shape());
                        match grads.get_mut(&parent.0.id) {
                            Some(acc) => acc.add_assign(&pg)?,
                            None => {
                                grads.insert(parent.0.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
