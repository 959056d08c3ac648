//! Dense f64 tensors with reverse-mode differentiation over a dynamically
//! recorded graph.
//!
//! A [`Tensor`] is a cheap handle (`Rc`) to an immutable value. Operations
//! on tensors that require gradients record a graph node holding the inputs
//! and a backward rule. [`Tensor::backward`] walks the graph once in reverse
//! topological order, accumulates `∂loss/∂t` into every reachable tensor that
//! requires gradients, and then releases the recorded nodes.
//!
//! Only scalar broadcasting is supported: binary operations take two tensors
//! of identical shape, or one tensor with a single element. Everything else
//! goes through explicit reshape/expand/gather operations.
//!
//! Graphs are single-threaded (`Rc`); parallel workers each build their own
//! graph over private parameter bindings.

mod elementwise;
mod linalg;
mod nn;
mod shape_ops;

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use elementwise::record_relu_patterns;
pub(crate) use elementwise::sigmoid;
pub(crate) use linalg::gemm;
pub use nn::Conv2dSpec;

/// Inputs handed to a backward rule.
pub(crate) struct BackwardCtx<'a> {
    /// Upstream gradient, same length as the output.
    pub grad: &'a [f64],
    /// Forward output values.
    pub output: &'a [f64],
    pub inputs: &'a [Tensor],
}

impl BackwardCtx<'_> {
    #[inline]
    pub fn needs(&self, i: usize) -> bool {
        self.inputs[i].requires_grad()
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs[i].data()
    }
}

type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct GraphNode {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: RefCell<Option<GraphNode>>,
    consumed: Cell<bool>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.node.borrow().as_ref().map(|n| n.name);
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &op)
            .field("data", &Preview(&self.0.data))
            .finish()
    }
}

struct Preview<'a>(&'a [f64]);

impl fmt::Debug for Preview<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 8 {
            write!(f, "{:?}", self.0)
        } else {
            write!(f, "{:?}.. ({} values)", &self.0[..8], self.0.len())
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: RefCell::new(None),
            consumed: Cell::new(false),
        }))
    }

    /// Constant (non-differentiated) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::from_parts(data, shape.to_vec(), false))
    }

    /// Leaf tensor that collects gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(Self::from_parts(t.to_vec(), shape.to_vec(), true))
    }

    /// Same values as a fresh leaf with the given gradient flag.
    pub fn detach_with_grad(&self, requires_grad: bool) -> Self {
        Self::from_parts(self.0.data.clone(), self.0.shape.clone(), requires_grad)
    }

    pub fn detach(&self) -> Self {
        self.detach_with_grad(false)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![v], Vec::new(), false)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_parts(data, vec![n], false)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(data, &[rows, cols])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(vec![0.0; numel(shape)], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_parts(vec![v; numel(shape)], shape.to_vec(), false)
    }

    pub fn eye(n: usize) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 1.0;
        }
        Self::from_parts(d, vec![n, n], false)
    }

    /// Records the result of an operation. The node is kept only if some
    /// input requires gradients.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: Vec<Tensor>,
        backward: impl Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let t = Self::from_parts(data, shape, requires_grad);
        if requires_grad {
            *t.0.node.borrow_mut() = Some(GraphNode {
                name,
                inputs,
                backward: Box::new(backward),
            });
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    #[inline]
    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "item() needs a single element, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// Name of the operation that produced this tensor, if it is still
    /// attached to a live graph.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.borrow().as_ref().map(|n| n.name)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    pub(crate) fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::shape(format!(
                "{what}: expected shape {:?}, got {:?}",
                shape,
                self.shape()
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::shape(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape()
            )));
        }
        Ok(())
    }

    /// Reverse-mode sweep from a single-element tensor.
    ///
    /// Gradients are added into the `grad` buffer of every reachable tensor
    /// with `requires_grad`, so a leaf used in several graphs accumulates
    /// across sweeps until [`Tensor::zero_grad`]. The recorded graph is
    /// released afterwards; running `backward` again through any part of it
    /// is an [`Error::Invariant`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::domain(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::domain("backward root does not require gradients"));
        }
        if self.0.consumed.get() {
            return Err(Error::Invariant(
                "backward already ran through this graph".into(),
            ));
        }
        let order = self.topological_order()?;

        let mut grads: HashMap<usize, Vec<f64>> = HashMap::with_capacity(order.len());
        grads.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let node = t.0.node.borrow_mut().take();
            if node.is_some() {
                t.0.consumed.set(true);
            }
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            if let Some(node) = node {
                let ctx = BackwardCtx {
                    grad: &g,
                    output: &t.0.data,
                    inputs: &node.inputs,
                };
                let input_grads = (node.backward)(&ctx);
                debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.name);
                for (input, ig) in node.inputs.iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(ig.len(), input.numel(), "{}", node.name);
                    match grads.get_mut(&input.key()) {
                        Some(acc) => add_into(acc, &ig),
                        None => {
                            grads.insert(input.key(), ig);
                        }
                    }
                }
            }
            let mut slot = t.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => add_into(acc, &g),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Inputs-before-outputs ordering of the differentiable subgraph.
    fn topological_order(&self) -> Result<Vec<Tensor>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            if t.0.consumed.get() {
                return Err(Error::Invariant(
                    "graph segment was already consumed by an earlier backward".into(),
                ));
            }
            let node = t.0.node.borrow();
            let children: Vec<Tensor> = node
                .as_ref()
                .map(|n| {
                    n.inputs
                        .iter()
                        .filter(|i| i.requires_grad() && !visited.contains(&i.key()))
                        .cloned()
                        .collect()
                })
                .unwrap_or_default();
            drop(node);
            stack.push((t, true));
            for c in children {
                stack.push((c, false));
            }
        }
        Ok(order)
    }
}

#[inline]
pub(crate) fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_checks_length() {
        assert!(matches!(
            Tensor::new(vec![1.0, 2.0], &[3]),
            Err(Error::Shape(_))
        ));
        let t = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(Tensor::scalar(2.0).shape(), &[] as &[usize]);
    }

    #[test]
    fn sum_gives_all_ones() {
        let x = Tensor::param(vec![0.3, -1.0, 2.5, 4.0], &[4]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn sum_of_squares_gives_twice_input() {
        let v = vec![0.5, -2.0, 3.0];
        let x = Tensor::param(v.clone(), &[3]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, vi) in g.iter().zip(&v) {
            assert_eq!(*gi, 2.0 * vi);
        }
    }

    #[test]
    fn reused_tensor_sums_branch_gradients() {
        let x = Tensor::param(vec![1.5], &[]).unwrap();
        x.add(&x).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn diamond_graph_visits_shared_node_once() {
        let x = Tensor::param(vec![2.0], &[]).unwrap();
        let y = x.exp();
        let loss = y.mul(&y).unwrap().add(&y).unwrap();
        loss.backward().unwrap();
        let e = 2.0f64.exp();
        let expected = 2.0 * e * e + e;
        assert!((x.grad().unwrap()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Domain(_))));
    }

    #[test]
    fn second_backward_is_an_error() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert!(matches!(loss.backward(), Err(Error::Invariant(_))));
    }

    #[test]
    fn consumed_segment_detected_from_another_root() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let shared = x.exp();
        let a = shared.sum();
        let b = shared.mean();
        a.backward().unwrap();
        assert!(matches!(b.backward(), Err(Error::Invariant(_))));
    }

    #[test]
    fn graph_released_after_backward() {
        let x = Tensor::param(vec![1.0], &[]).unwrap();
        let y = x.exp();
        let loss = y.scale(3.0);
        assert!(loss.op_name().is_some());
        loss.backward().unwrap();
        assert!(loss.op_name().is_none());
        assert!(y.op_name().is_none());
        // Only the caller's handles keep x alive now.
        assert_eq!(Rc::strong_count(&x.0), 1);
    }

    #[test]
    fn leaves_accumulate_across_graphs_until_zeroed() {
        let x = Tensor::param(vec![1.0], &[]).unwrap();
        x.scale(3.0).backward().unwrap();
        x.scale(4.0).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn constants_do_not_record_graph() {
        let a = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.exp().add(&a).unwrap();
        assert!(!b.requires_grad());
        assert!(b.op_name().is_none());
    }
}
