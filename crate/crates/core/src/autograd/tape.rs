//! Operation tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and, when any input
//! needs a gradient, a closure mapping the output gradient to input
//! gradients. `backward` walks the nodes in reverse record order.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps the output gradient to one optional gradient per input. The
/// `needs` mask tells the rule which inputs actually want one.
pub(crate) type BackwardFn = Box<dyn Fn(&[f32], &[bool]) -> Vec<Option<Vec<f32>>>>;

struct Node {
    shape: Vec<usize>,
    value: Rc<Vec<f32>>,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    ops_visited: usize,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f32]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Number of recorded operations whose backward rule ran.
    pub fn ops_visited(&self) -> usize {
        self.ops_visited
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a tensor as a leaf; it is differentiable iff the tensor
    /// has `requires_grad` set.
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Vec::new(), None)
    }

    /// Records a leaf that always receives a gradient.
    pub fn variable(&self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), true, Vec::new(), None)
    }

    pub fn constant(&self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Vec::new(), None)
    }

    pub fn value(&self, v: Var) -> Rc<Vec<f32>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        Tensor::new(&n.shape, n.value.as_ref().clone()).expect("recorded shapes are valid")
    }

    pub fn scalar_value(&self, v: Var) -> f32 {
        self.nodes.borrow()[v.0].value[0]
    }

    /// Appends an operation. The backward rule is dropped when no input
    /// needs a gradient.
    pub(crate) fn record<F>(&self, shape: Vec<usize>, value: Vec<f32>, inputs: &[Var], backward: F) -> Var
    where
        F: Fn(&[f32], &[bool]) -> Vec<Option<Vec<f32>>> + 'static,
    {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        debug_assert!(
            value.iter().all(|v| v.is_finite()) || inputs.iter().any(|i| !self.all_finite(*i)),
            "non-finite output from finite inputs"
        );
        let requires_grad = inputs.iter().any(|v| self.requires_grad(*v));
        let backward: Option<BackwardFn> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.push(shape, value, requires_grad, inputs.iter().map(|v| v.0).collect(), backward)
    }

    fn all_finite(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].value.iter().all(|x| x.is_finite())
    }

    fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<f32>,
        requires_grad: bool,
        inputs: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value: Rc::new(value), requires_grad, inputs, backward });
        Var(nodes.len() - 1)
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Usage(format!("backward needs a scalar output, got shape {:?}", root.shape)));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut ops_visited = 0;
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            let Some(rule) = &node.backward else { continue };
            let Some(gout) = grads[idx].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let contributions = rule(&gout, &needs);
            ops_visited += 1;
            debug_assert_eq!(contributions.len(), node.inputs.len());
            for ((&input, contrib), need) in node.inputs.iter().zip(contributions).zip(needs) {
                let Some(contrib) = contrib else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(contrib.len(), nodes[input].value.len());
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads, ops_visited })
    }
}
