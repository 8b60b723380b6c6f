use crate::ops::{conv, dense, elementwise, loss, norm, pool};
use crate::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded operation together with whatever its backward pass needs.
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2x {
        x: Var,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        ctx: norm::BatchNormCtx<T>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    PadChannels {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
        scale: T,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of op applications. Inputs always precede the ops
/// that consume them, so reverse recording order is a valid backward
/// schedule.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. Gradients are only reported for leaves
    /// created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        debug_assert!(
            !inputs.iter().all(|i| self.nodes[i.0].value.is_finite()) || value.is_finite(),
            "non-finite output from finite inputs"
        );
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a one-element `root`. Consumes the tape; gradients
    /// reaching a value from several consumers are summed.
    pub fn backward(mut self, root: Var) -> Result<Gradients<T>> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::full(root_value.shape(), T::one()));

        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                if !self.nodes[i].requires_grad {
                    grads[i] = None;
                }
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let contributions = self.backward_node(i, &g)?;
            for (v, dv) in contributions {
                accumulate(&mut grads[v.0], dv)?;
            }
            // Intermediate values are never read again once their own
            // backward has run.
            self.nodes[i].value = Tensor::scalar(T::zero());
        }
        // Drop grads that were seeded on nodes beyond the root or on
        // non-leaf intermediates.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut out = Vec::with_capacity(3);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, stride, pad } => {
                let (dx, dw) =
                    conv::conv2d_backward(val(*x), val(*w), g, *stride, *pad, need(*x), need(*w));
                out.extend(dx.map(|t| (*x, t)));
                out.extend(dw.map(|t| (*w, t)));
            }
            Op::ConvTranspose2d { x, w, stride, pad } => {
                let (dx, dw) = conv::conv_transpose2d_backward(
                    val(*x),
                    val(*w),
                    g,
                    *stride,
                    *pad,
                    need(*x),
                    need(*w),
                );
                out.extend(dx.map(|t| (*x, t)));
                out.extend(dw.map(|t| (*w, t)));
            }
            Op::MaxPool2d { x, argmax } => {
                out.push((*x, pool::maxpool2d_backward(val(*x).shape(), argmax, g)));
            }
            Op::Upsample2x { x } => {
                out.push((*x, pool::upsample2x_backward(val(*x).shape(), g)));
            }
            Op::Relu { x } => {
                out.push((*x, elementwise::relu_backward(val(*x), g)));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                ctx,
            } => {
                let (dx, dgamma, dbeta) = norm::batchnorm2d_backward(val(*gamma), ctx, g);
                if need(*x) {
                    out.push((*x, dx));
                }
                if need(*gamma) {
                    out.push((*gamma, dgamma));
                }
                if need(*beta) {
                    out.push((*beta, dbeta));
                }
            }
            Op::Dense { x, w, b } => {
                let (dx, dw, db) =
                    dense::dense_backward(val(*x), val(*w), g, need(*x), need(*w), need(*b));
                out.extend(dx.map(|t| (*x, t)));
                out.extend(dw.map(|t| (*w, t)));
                out.extend(db.map(|t| (*b, t)));
            }
            Op::Dropout { x, mask } => {
                out.push((*x, elementwise::mul_mask(g, mask)));
            }
            Op::Add { a, b } => {
                if need(*a) {
                    out.push((*a, g.clone()));
                }
                if need(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::PadChannels { x } => {
                out.push((*x, elementwise::pad_channels_backward(val(*x).shape(), g)));
            }
            Op::Reshape { x } => {
                out.push((*x, g.clone().reshape(val(*x).shape())?));
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                out.push((*x, g.map(|v| v * f)));
            }
            Op::Sum { x } => {
                out.push((*x, Tensor::full(val(*x).shape(), g.data()[0])));
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                let data = weights.iter().map(|&w| w * s).collect();
                out.push((*x, Tensor::from_vec(val(*x).shape().to_vec(), data)?));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                scale,
            } => {
                out.push((
                    *logits,
                    loss::cross_entropy_backward(val(*logits).shape(), labels, probs, *scale, g),
                ));
            }
            Op::Mse { pred, target } => {
                out.push((*pred, loss::mse_backward(val(*pred), target, g)));
            }
        }
        out.retain(|(v, _)| need(*v));
        Ok(out)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, dv: Tensor<T>) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&dv),
        None => {
            *slot = Some(dv);
            Ok(())
        }
    }
}

/// Gradients of the backward root with respect to each grad-requiring leaf.
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]), true);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1., 2.]), true);
        let y = tape.relu(x);
        assert!(matches!(
            tape.backward(y),
            Err(TensorError::NonScalarRoot(s)) if s == vec![2]
        ));
    }

    #[test]
    fn two_consumers_sum_their_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3], &[-1., 2., 3.]), true);
        let a = tape.scale(x, 2.0);
        let b = tape.relu(x);
        let c = tape.add(a, b).unwrap();
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 3.0, 3.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1., 2.]));
        let w = tape.leaf(t(&[2], &[3., 4.]), true);
        let c = tape.add(x, w).unwrap();
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 1.0]);
    }
}
