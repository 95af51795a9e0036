//! Dense `N x C x H x W` tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap handle to an immutable node. Operations that
//! involve at least one gradient-tracking input record a backward closure;
//! [`Tensor::backward`] walks those closures in reverse topological order
//! and accumulates gradients into the leaves created with
//! [`Tensor::leaf`] (the data behind every [`Parameter`]).
//!
//! Intermediate gradients live only for the duration of one backward sweep,
//! so calling `backward` twice on the same graph adds the same contribution
//! to the leaves twice and nothing else.

mod ops;
mod optim;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

pub use optim::{adam_step, AdamConfig, Parameter};

use crate::error::{Error, Result};

/// `(N, C, H, W)`.
pub type Shape = [usize; 4];

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

/// Backward closure: receives the node's inputs, its forward output and the
/// gradient flowing into it; returns one optional gradient per input.
pub(crate) type BackwardFn = Box<dyn Fn(&[Tensor], &[f32], &[f32]) -> Vec<Option<Vec<f32>>>>;

struct Node {
    shape: Shape,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

thread_local! {
    static NO_GRAD_DEPTH: Cell<usize> = const { Cell::new(0) };
}

/// Run `f` without recording any backward closures.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Guard;
    impl Drop for Guard {
        fn drop(&mut self) {
            NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
        }
    }
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let _g = Guard;
    f()
}

fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

impl Tensor {
    fn from_node(
        shape: Shape,
        data: Vec<f32>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Self {
        debug_assert_eq!(data.len(), numel(shape));
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents,
            backward,
        }))
    }

    /// Constant (non-differentiable) tensor. Panics if `data` does not match `shape`.
    pub fn constant(shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), numel(shape), "data length does not match {shape:?}");
        Self::from_node(shape, data, false, Vec::new(), None)
    }

    pub fn try_constant(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::Shape(format!(
                "{} values cannot fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self::constant(shape, data))
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::constant(shape, vec![0.0; numel(shape)])
    }

    pub fn full(shape: Shape, v: f32) -> Self {
        Self::constant(shape, vec![v; numel(shape)])
    }

    pub fn scalar(v: f32) -> Self {
        Self::constant([1, 1, 1, 1], vec![v])
    }

    /// Gradient-accumulating leaf.
    pub fn leaf(shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), numel(shape), "data length does not match {shape:?}");
        Self::from_node(shape, data, true, Vec::new(), None)
    }

    /// Record an operation result. Falls back to a constant when no input
    /// tracks gradients or recording is disabled.
    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<f32>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::from_node(shape, data, true, parents, Some(backward))
        } else {
            Self::constant(shape, data)
        }
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    pub(crate) fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f32 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.shape(), self.to_vec())
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Reverse sweep from a one-element loss, accumulating into leaf grads.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS so deep graphs do not overflow the stack.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashMap<usize, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.insert(t.id(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !visited.contains_key(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut grads: HashMap<usize, Vec<f32>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.0.backward {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let out = t.0.data.borrow();
                    let pg = f(&t.0.parents, &out, &g);
                    for (p, pg) in t.0.parents.iter().zip(pg) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

pub(crate) fn shape_mismatch(op: &str, a: Shape, b: Shape) -> Error {
    Error::Shape(format!("{op}: shapes {a:?} and {b:?} are incompatible"))
}
