//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends one node holding its forward value and a boxed backward
//! rule. Nodes are topologically ordered by construction, so the backward pass
//! is a single reverse sweep.

use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Backward rule of a recorded op.
pub trait Backward {
    /// Propagates `grad` (the gradient w.r.t. this node's output) into `sink`.
    fn backward(&self, tape: &Tape, grad: &Tensor, sink: &mut GradSink<'_>);
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Option<Box<dyn Backward>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are only accumulated for leaves created
    /// with `requires_grad = true` and for ops downstream of them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push_op<B: Backward + 'static>(
        &mut self,
        value: Tensor,
        inputs: &[Var],
        op: B,
    ) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad {
                Some(Box::new(op))
            } else {
                None
            },
        });
        Var(self.nodes.len() - 1)
    }

    /// Backward pass from a scalar root with unit seed.
    pub fn backward(&self, root: Var) -> Gradients {
        let seed = Tensor::full(self.value(root).shape(), 1.0);
        self.backward_with(root, seed)
    }

    /// Backward pass seeding the root with an arbitrary cotangent.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(seed);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Some(op) => {
                    let mut sink = GradSink {
                        grads: &mut grads,
                        tape: self,
                    };
                    op.backward(self, &g, &mut sink);
                }
                None => grads[i] = Some(g),
            }
        }
        Gradients { grads }
    }
}

/// Accumulator handed to backward rules.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Tensor>],
    tape: &'a Tape,
}

impl GradSink<'_> {
    pub fn wants(&self, v: Var) -> bool {
        self.tape.requires_grad(v)
    }

    /// Adds `g` into the gradient slot of `v`.
    pub fn add(&mut self, v: Var, g: Tensor) {
        if !self.wants(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Lets `f` accumulate in place into the (zero-initialized) slot of `v`.
    pub fn add_with(&mut self, v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.wants(v) {
            return;
        }
        let shape = self.tape.value(v).shape().to_vec();
        let slot = self.grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape));
        f(slot);
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
