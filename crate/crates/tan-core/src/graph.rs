//! Dynamically recorded computation graph with reverse-mode automatic
//! differentiation.
//!
//! Operations executed against a recording graph push one node each, in
//! execution order. `backward` walks the tape in exact reverse, applying
//! each node's backward rule once and accumulating (adding) into input
//! gradients, so a tensor feeding several consumers receives the sum of
//! all branch gradients.

use std::collections::HashMap;

use crate::error::{Result, TanError};
use crate::tensor::{Scalar, Tensor, TensorId};

/// Backward rule for one recorded operation: maps the output gradient to
/// per-input gradient contributions. Entries are `None` for inputs that do
/// not require gradient.
pub(crate) trait Backward<T: Scalar>: Send + Sync {
    fn backward(&self, inputs: &[Tensor<T>], output: &Tensor<T>, grad_out: &[T])
        -> Vec<Option<Vec<T>>>;
}

struct Node<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    output: Tensor<T>,
    rule: Box<dyn Backward<T>>,
}

pub struct Graph<T: Scalar> {
    recording: bool,
    consumed: bool,
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Scalar> Graph<T> {
    /// Graph that records operations for a later `backward` pass.
    pub fn recording() -> Self {
        Graph {
            recording: true,
            consumed: false,
            nodes: Vec::new(),
            macs: 0,
        }
    }

    /// Forward-only graph: operations run but nothing is recorded.
    pub fn inference() -> Self {
        Graph {
            recording: false,
            consumed: false,
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Multiply-accumulate count of every operation executed through this
    /// graph (parameterized layers only; pools and activations are free).
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub(crate) fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    pub(crate) fn record(
        &mut self,
        inputs: Vec<Tensor<T>>,
        output: Tensor<T>,
        rule: Box<dyn Backward<T>>,
    ) {
        // Nothing upstream needs gradient: the node can never be reached
        // by backward, so don't keep it alive.
        if self.recording && inputs.iter().any(|t| t.requires_grad()) {
            self.nodes.push(Node {
                inputs,
                output,
                rule,
            });
        }
    }

    /// Whether outputs of ops on this graph should carry `requires_grad`.
    pub(crate) fn track(&self, inputs: &[&Tensor<T>]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    /// Reverse pass from a scalar loss. Populates `grad` on every
    /// `requires_grad` tensor reachable from the loss.
    pub fn backward(&mut self, loss: &Tensor<T>) -> Result<()> {
        if !self.recording {
            return Err(TanError::Autograd(
                "backward on an inference graph; use Graph::recording()".into(),
            ));
        }
        if self.consumed {
            return Err(TanError::Autograd(
                "backward called twice on the same recorded graph".into(),
            ));
        }
        if loss.numel() != 1 {
            return Err(TanError::Autograd(format!(
                "loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        self.consumed = true;

        let mut flowing: HashMap<TensorId, Vec<T>> = HashMap::new();
        flowing.insert(loss.id(), vec![T::one()]);
        if loss.requires_grad() {
            loss.accumulate_grad(&[T::one()]);
        }

        for node in self.nodes.iter().rev() {
            let Some(grad_out) = flowing.get(&node.output.id()) else {
                continue; // not on any path to the loss
            };
            let grads = node.rule.backward(&node.inputs, &node.output, grad_out);
            debug_assert_eq!(grads.len(), node.inputs.len());
            for (input, grad) in node.inputs.iter().zip(grads) {
                let Some(g) = grad else { continue };
                debug_assert_eq!(g.len(), input.numel());
                if input.requires_grad() {
                    input.accumulate_grad(&g);
                }
                match flowing.entry(input.id()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (a, b) in e.get_mut().iter_mut().zip(&g) {
                            *a = *a + *b;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(g);
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
    use crate::ops;

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::recording();
        let x = Tensor::<f32>::param(vec![2], vec![1.0, 2.0]).unwrap();
        let s = ops::sum(&mut g, &x).unwrap();
        g.backward(&s).unwrap();
        let err = g.backward(&s).unwrap_err();
        assert!(matches!(err, TanError::Autograd(_)), "{err}");
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let mut g = Graph::recording();
        let x = Tensor::<f32>::param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = ops::relu(&mut g, &x).unwrap();
        let err = g.backward(&y).unwrap_err();
        assert!(matches!(err, TanError::Autograd(_)), "{err}");
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::recording();
        let x = Tensor::<f32>::param(vec![4], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let s = ops::sum(&mut g, &x).unwrap();
        g.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn relu_gates_gradient() {
        let mut g = Graph::recording();
        let x = Tensor::<f32>::param(vec![2], vec![-1.0, 1.0]).unwrap();
        let y = ops::relu(&mut g, &x).unwrap();
        let s = ops::sum(&mut g, &y).unwrap();
        g.backward(&s).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn fan_out_gradients_sum() {
        // x feeds two consumers; grad(x) is the sum of both branches:
        // loss = sum(x + x) + sum(x) => grad = 3.
        let mut g = Graph::recording();
        let x = Tensor::<f32>::param(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let doubled = ops::add(&mut g, &x, &x).unwrap();
        let a = ops::sum(&mut g, &doubled).unwrap();
        let b = ops::sum(&mut g, &x).unwrap();
        let loss = ops::add(&mut g, &a, &b).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0; 3]);
    }

    #[test]
    fn grads_accumulate_across_re_recorded_graphs() {
        let x = Tensor::<f32>::param(vec![2], vec![1.0, 2.0]).unwrap();
        for _ in 0..2 {
            let mut g = Graph::recording();
            let s = ops::sum(&mut g, &x).unwrap();
            g.backward(&s).unwrap();
        }
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }
}
