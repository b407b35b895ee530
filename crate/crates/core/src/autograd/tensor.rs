//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Every backward rule is written in terms of differentiable tensor ops, so
//! gradients produced with `create_graph = true` can themselves be
//! differentiated. The R1 penalty depends on this.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub type Array = ArrayD<f64>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Whether new ops record their inputs for differentiation on this thread.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables graph recording until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    NoGradGuard { prev }
}

/// Receives (upstream gradient, op inputs, op output) and returns one
/// gradient per input.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    id: u64,
    value: Array,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl Tensor {
    pub fn constant(value: Array) -> Tensor {
        Tensor(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn leaf(value: Array) -> Tensor {
        Tensor(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::constant(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let arr = ArrayD::from_shape_vec(IxDyn(shape), data)
            .map_err(|e| Error::Shape(format!("from_vec: {e}")))?;
        Ok(Tensor::constant(arr))
    }

    pub(crate) fn from_op(value: Array, parents: Vec<Tensor>, backward: BackwardFn) -> Tensor {
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Tensor(Rc::new(Node {
                id: next_id(),
                value,
                requires_grad,
                parents,
                backward: Some(backward),
            }))
        } else {
            Tensor::constant(value)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Array {
        &self.0.value
    }

    pub fn into_value(self) -> Array {
        match Rc::try_unwrap(self.0) {
            Ok(node) => node.value,
            Err(rc) => rc.value.clone(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn ndim(&self) -> usize {
        self.0.value.ndim()
    }

    pub fn len(&self) -> usize {
        self.0.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.value.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.0.value.clone())
    }

    /// Same value as a fresh differentiable leaf.
    pub fn detach_leaf(&self) -> Tensor {
        Tensor::leaf(self.0.value.clone())
    }

    /// Value of a zero-dimensional or single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        *self.0.value.iter().next().expect("item() on empty tensor")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.value.iter().copied().collect()
    }
}

/// Gradients of a scalar `output` with respect to each of `inputs`.
///
/// `None` marks inputs the output does not depend on. With `create_graph`
/// the returned gradients are themselves part of the graph.
pub fn grad(output: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Result<Vec<Option<Tensor>>> {
    if output.len() != 1 {
        return Err(Error::Shape(format!(
            "grad needs a scalar output, got shape {:?}",
            output.shape()
        )));
    }
    let seed = Tensor::constant(ArrayD::from_elem(IxDyn(output.shape()), 1.0));
    grad_with_seed(output, seed, inputs, create_graph)
}

pub fn grad_with_seed(
    output: &Tensor,
    seed: Tensor,
    inputs: &[&Tensor],
    create_graph: bool,
) -> Result<Vec<Option<Tensor>>> {
    if !output.requires_grad() {
        return Ok(vec![None; inputs.len()]);
    }
    let _guard = if create_graph { None } else { Some(no_grad()) };

    // Iterative post-order DFS gives a topological order.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(output.clone(), false)];
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

    let mut grads: HashMap<u64, Tensor> = HashMap::new();
    grads.insert(output.id(), seed);
    for node in order.iter().rev() {
        let Some(g) = grads.get(&node.id()).cloned() else {
            continue;
        };
        let Some(backward) = node.0.backward.as_ref() else {
            continue;
        };
        let parent_grads = backward(&g, &node.0.parents, node);
        for (p, pg) in node.0.parents.iter().zip(parent_grads) {
            let Some(pg) = pg else { continue };
            if !p.requires_grad() {
                continue;
            }
            let acc = match grads.remove(&p.id()) {
                Some(prev) => crate::autograd::ops::add(&prev, &pg),
                None => pg,
            };
            grads.insert(p.id(), acc);
        }
        if !inputs.iter().any(|i| i.id() == node.id()) {
            grads.remove(&node.id());
        }
    }
    Ok(inputs.iter().map(|i| grads.get(&i.id()).cloned()).collect())
}
