use std::collections::HashMap;

use crate::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps the upstream gradient of a node to gradients of its parents.
pub(crate) type BackwardFn = Box<dyn Fn(&Graph, &Tensor) -> Vec<(Var, Tensor)>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    is_param: bool,
    backward: Option<BackwardFn>,
}

/// Define-by-run tape. Every op computes its value eagerly and, when any
/// parent requires a gradient, records a closure for the reverse pass.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Tape that records backward closures.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Tape that only evaluates values.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf: never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            is_param: false,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: self.grad_enabled,
            is_param: true,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Mutable access to a recorded value. Ops downstream of `var` that were
    /// already evaluated are not recomputed.
    pub fn value_mut(&mut self, var: Var) -> &mut Tensor {
        &mut self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, parents: &[Var], backward: impl FnOnce() -> BackwardFn) -> Var {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward = if requires_grad { Some(backward()) } else { None };
        self.nodes.push(Node {
            value,
            requires_grad,
            is_param: false,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass seeded with `d(objective)/d(var)` for each seed. Seeds on
    /// the same var accumulate.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        let mut start = 0;
        for (var, g) in seeds {
            assert_eq!(
                g.shape(),
                self.nodes[var.0].value.shape(),
                "seed gradient shape mismatch"
            );
            accumulate(&mut grads[var.0], g);
            start = start.max(var.0 + 1);
        }

        let mut out = HashMap::new();
        for idx in (0..start).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if node.is_param {
                out.insert(Var(idx), grad);
            } else if let Some(backward) = &node.backward {
                for (parent, g) in backward(self, &grad) {
                    debug_assert!(parent.0 < idx);
                    if self.nodes[parent.0].requires_grad {
                        accumulate(&mut grads[parent.0], g);
                    }
                }
            }
        }
        Gradients { grads: out }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Parameter gradients produced by a reverse pass.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
