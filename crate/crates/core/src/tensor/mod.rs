//! Dense row-major tensors with a reverse-mode gradient tape.
//!
//! A [`Tensor`] is a cheap reference-counted handle. Every operation applied
//! to a tensor that requires gradients records a node holding its parents and
//! a backward closure; [`Tensor::backward`] walks that DAG once in reverse
//! topological order. Leaf gradients accumulate across calls until
//! [`Tensor::zero_grad`] is invoked.
//!
//! Tensors are limited to rank 4. Batched operations are expressed by
//! reshaping and looping over the leading axis.

mod elementwise;
mod gradcheck;
mod linalg;
mod reduce;
mod shape;
mod view;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use reduce::ReduceOp;
pub use shape::{broadcast_shapes, numel};
pub use elementwise::{BinaryOp, UnaryOp};

pub(crate) use shape::for_each_broadcast;

/// Maximum supported rank.
pub const MAX_RANK: usize = 4;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any tape nodes on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Inputs handed to a backward closure.
pub(crate) struct BackwardCtx<'a, T: Scalar> {
    /// Upstream gradient, same shape as the output.
    pub grad: &'a [T],
    /// Forward output values.
    pub out: &'a [T],
    pub parents: &'a [Tensor<T>],
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    op: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

pub struct Tensor<T: Scalar>(Rc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let op = self.0.node.as_ref().map(|n| n.op).unwrap_or("leaf");
        write!(f, "Tensor{:?}[{}]", self.0.shape, op)?;
        if data.len() <= 16 {
            write!(f, " {:?}", &data[..])?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.len() > MAX_RANK {
        return Err(Error::InvalidTensor(format!(
            "rank {} exceeds the supported maximum of {MAX_RANK}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidTensor(format!("zero extent in shape {shape:?}")));
    }
    if numel(shape) != len {
        return Err(Error::InvalidTensor(format!(
            "shape {shape:?} holds {} values, data has {len}",
            numel(shape)
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn make(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            node,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf whose gradient accumulates on backward.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::make(shape.to_vec(), data, true, None))
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| T::of(v)).collect(), shape)
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        Self::new(vec![value; numel(shape)], shape)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::make(vec![1], vec![value], false, None)
    }

    /// Records an operation result. A tape node is attached only when grad
    /// mode is on and at least one parent requires gradients.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::make(
                shape,
                data,
                true,
                Some(Node {
                    op,
                    parents,
                    backward,
                }),
            )
        } else {
            Self::make(shape, data, false, None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.0.data.borrow()[0]
    }

    /// Copy of the accumulated gradient, if any has been recorded.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Constant copy sharing no tape history.
    pub fn detach(&self) -> Self {
        Self::make(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// In-place mutation of leaf values (optimizer steps, finite-difference
    /// perturbations). Panics on a recorded node: results must stay immutable.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        assert!(self.is_leaf(), "update_data called on a non-leaf tensor");
        f(&mut self.0.data.borrow_mut());
    }

    /// Gives `f` mutable access to both data and accumulated grad of a leaf.
    pub fn update_with_grad(&self, f: impl FnOnce(&mut [T], Option<&[T]>)) {
        assert!(self.is_leaf(), "update_with_grad called on a non-leaf tensor");
        let grad = self.0.grad.borrow();
        f(&mut self.0.data.borrow_mut(), grad.as_deref());
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a = *a + v),
            None => *slot = Some(g),
        }
    }

    /// Post-order over tracked nodes: every parent precedes its children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((t, next)) = stack.pop() {
            let parents = t.0.node.as_ref().map(|n| n.parents.as_slice()).unwrap_or(&[]);
            if next < parents.len() {
                let p = parents[next].clone();
                stack.push((t, next + 1));
                if p.requires_grad() && visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }

    /// Number of tracked nodes reachable from this tensor (including leaves).
    pub fn tape_len(&self) -> usize {
        if self.requires_grad() {
            self.topo_order().len()
        } else {
            0
        }
    }

    /// Back-propagates from a scalar loss into every reachable leaf that
    /// requires gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate_grad(vec![T::one()]);
        for t in order.iter().rev() {
            let Some(node) = t.0.node.as_ref() else {
                continue;
            };
            let Some(grad) = t.0.grad.borrow_mut().take() else {
                continue;
            };
            let out = t.0.data.borrow();
            let ctx = BackwardCtx {
                grad: &grad,
                out: &out,
                parents: &node.parents,
            };
            let grads = (node.backward)(&ctx);
            debug_assert_eq!(grads.len(), node.parents.len(), "{}", node.op);
            for (p, g) in node.parents.iter().zip(grads) {
                if let Some(g) = g {
                    if p.requires_grad() {
                        debug_assert_eq!(g.len(), p.numel(), "{}", node.op);
                        p.accumulate_grad(g);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_invariant_enforced() {
        assert!(Tensor::<f64>::new(vec![1.0, 2.0, 3.0], &[2, 2]).is_err());
        assert!(Tensor::<f64>::new(vec![], &[0]).is_err());
        assert!(Tensor::<f64>::new(vec![0.0; 32], &[2, 2, 2, 2, 2]).is_err());
        assert_eq!(Tensor::<f64>::zeros(&[2, 3]).unwrap().numel(), 6);
    }

    #[test]
    fn backward_of_square_sum() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_of_sin_at_zero() {
        let x = Tensor::<f64>::param(vec![0.0], &[1]).unwrap();
        x.sin().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = Tensor::<f64>::param(vec![1.0, -2.0], &[2]).unwrap();
        let loss = x.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, -8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn shared_subexpression_visited_once() {
        // y = x*x used twice: d/dx (y + y) = 4x
        let x = Tensor::<f64>::param(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap();
        let loss = y.add(&y).unwrap().sum().unwrap();
        assert_eq!(loss.tape_len(), 4);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.exp();
        assert!(matches!(y.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        let y = no_grad(|| x.exp());
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }
}
