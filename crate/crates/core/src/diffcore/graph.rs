//! Tape-based reverse-mode differentiation over tensors.
//!
//! A [`Graph`] records every value produced during a forward pass together
//! with the [`Function`] that produced it. [`Graph::backward`] walks the
//! tape in reverse and accumulates vector-Jacobian products into every leaf
//! that was created with `requires_grad`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable tensor operation.
///
/// `forward` may cache intermediates on `self`; `backward` receives the same
/// inputs plus the forward output and the upstream gradient and returns one
/// gradient per input (same shape as that input).
pub trait Function<T: Scalar> {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Vec<Tensor<T>>;

    /// Like `backward`, but entries whose `needed` flag is false may be
    /// returned as zeros without being computed.
    fn backward_needed(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        needed: &[bool],
    ) -> Vec<Tensor<T>> {
        let _ = needed;
        self.backward(inputs, output, grad_output)
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Option<Box<dyn Function<T>>>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Recording tape. Nodes are appended in evaluation order, so the tape is
/// already topologically sorted.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Evaluates `f` on the given inputs and records it.
    pub fn apply<F: Function<T> + 'static>(&mut self, mut f: F, inputs: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            f.forward(&vals)?
        };
        if !value.is_finite() {
            return Err(Error::NonFinite {
                component: f.name().to_string(),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: Some(Box::new(f)),
            inputs: inputs.to_vec(),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(Error::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(root_node.value.shape(), T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor<T>> =
                node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needed: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = op.backward_needed(&inputs, &node.value, &g, &needed);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for (v, ig) in node.inputs.iter().zip(input_grads) {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.shape(), self.nodes[v.0].value.shape(), "{}", op.name());
                match &mut grads[v.0] {
                    Some(acc) => acc.axpy(T::one(), &ig)?,
                    slot @ None => *slot = Some(ig),
                }
            }
            // Keep the root's own gradient queryable.
            if idx == root.0 {
                grads[idx] = Some(g);
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`; zeros when `v` is unreachable from the root.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}
