use rand::{Rng, RngCore};

use crate::tape::Op;
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

pub(crate) fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("shape")
}

pub(crate) fn mul_mask<T: Scalar>(dy: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    let data = dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Tensor::from_vec(dy.shape().to_vec(), data).expect("shape")
}

pub(crate) fn pad_channels_backward<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    let [n, c, h, w] = dx.dims4();
    let to = dy.dims4()[1];
    let plane = c * h * w;
    for b in 0..n {
        dx.data_mut()[b * plane..(b + 1) * plane]
            .copy_from_slice(&dy.data()[b * to * h * w..b * to * h * w + plane]);
    }
    dx
}

impl<T: Scalar> Tape<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(y, Op::Relu { x }, &[x])
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| p + q).collect();
        let y = Tensor::from_vec(av.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::lit(factor);
        let y = self.value(x).map(|v| v * f);
        self.push(y, Op::Scale { x, factor: f }, &[x])
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x }, &[x])
    }

    /// `Σ x_i · weights_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum",
                lhs: xv.shape().to_vec(),
                rhs: weights.shape().to_vec(),
            });
        }
        let s = xv.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        let weights = weights.data().to_vec();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    /// Collapses everything after the batch axis: `[N, ...] -> [N, D]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().first().ok_or_else(|| TensorError::InvalidShape {
            op: "flatten",
            shape: vec![],
            reason: "rank-0 tensor".into(),
        })?;
        let d = xv.numel() / n;
        let y = xv.clone().reshape(&[n, d])?;
        Ok(self.push(y, Op::Reshape { x }, &[x]))
    }

    /// Zero-extends the channel axis of `[N, C, H, W]` to `channels`.
    pub fn pad_channels(&mut self, x: Var, channels: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 || xv.shape()[1] > channels {
            return Err(TensorError::InvalidArgument {
                op: "pad_channels",
                reason: format!("cannot pad shape {:?} to {channels} channels", xv.shape()),
            });
        }
        let [n, c, h, w] = xv.dims4();
        let plane = c * h * w;
        let mut y = vec![T::zero(); n * channels * h * w];
        for b in 0..n {
            y[b * channels * h * w..b * channels * h * w + plane]
                .copy_from_slice(&xv.data()[b * plane..(b + 1) * plane]);
        }
        let y = Tensor::from_vec(vec![n, channels, h, w], y)?;
        Ok(self.push(y, Op::PadChannels { x }, &[x]))
    }

    /// Inverted dropout. In eval mode this is the identity and records
    /// nothing.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut dyn RngCore, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let y = mul_mask(self.value(x), &mask);
        Ok(self.push(y, Op::Dropout { x, mask }, &[x]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_values() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(vec![2], vec![-1.0, 2.0]).unwrap(), false);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn add_requires_identical_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(&[1, 3, 2, 2]), false);
        let b = tape.leaf(Tensor::zeros(&[1, 4, 2, 2]), false);
        assert!(matches!(tape.add(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn pad_channels_appends_zeros() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 1, 1, 2], |i| i as f64 + 1.0), true);
        let y = tape.pad_channels(x, 3).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 0., 0., 0., 0., 3., 4., 0., 0., 0., 0.]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::full(&[1000], 1.0), true);
        assert_eq!(tape.dropout(x, 0.5, &mut rng, false).unwrap(), x);
        let y = tape.dropout(x, 0.5, &mut rng, true).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept), "kept {kept}");
    }

    #[test]
    fn flatten_keeps_batch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[4, 512, 2, 2]), false);
        let y = tape.flatten(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[4, 2048]);
    }
}
