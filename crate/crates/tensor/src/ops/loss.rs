use crate::tape::Op;
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    shape: &[usize],
    labels: &[usize],
    probs: &[T],
    scale: T,
    g: &Tensor<T>,
) -> Tensor<T> {
    let (n, m) = (shape[0], shape[1]);
    let k = g.data()[0] * scale / T::lit(n as f64);
    let mut d = probs.to_vec();
    for (row, &y) in d.chunks_exact_mut(m).zip(labels) {
        row[y] -= T::one();
        row.iter_mut().for_each(|v| *v *= k);
    }
    Tensor::from_vec(shape.to_vec(), d).expect("shape")
}

pub(crate) fn mse_backward<T: Scalar>(pred: &Tensor<T>, target: &[T], g: &Tensor<T>) -> Tensor<T> {
    let k = T::lit(2.0) * g.data()[0] / T::lit(pred.numel() as f64);
    let data = pred.data().iter().zip(target).map(|(&p, &t)| k * (p - t)).collect();
    Tensor::from_vec(pred.shape().to_vec(), data).expect("shape")
}

impl<T: Scalar> Tape<T> {
    /// Batch-mean softmax cross-entropy over `[N, M]` logits. With
    /// `class_average` each sample's `-log p_y` is further divided by the
    /// number of classes `M`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], class_average: bool) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (n, m) = (lv.shape()[0], lv.shape()[1]);
        if m < 2 {
            return Err(TensorError::InvalidShape {
                op: "cross_entropy",
                shape: lv.shape().to_vec(),
                reason: "need at least 2 classes".into(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= m) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes: m });
        }
        let scale = if class_average { T::one() / T::lit(m as f64) } else { T::one() };
        let mut total = 0.0f64;
        for (row, &y) in lv.data().chunks_exact(m).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += (lse - row[y]).as_f64();
        }
        let value = T::lit(total / n as f64) * scale;
        let probs = softmax_rows(lv.data(), m);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                scale,
            },
            &[logits],
        ))
    }

    /// Mean squared error against a constant target, averaged over every
    /// element (batch included).
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: pv.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let sq: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t).as_f64().powi(2))
            .sum();
        let value = T::lit(sq / pv.numel() as f64);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            &[pred],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let p = softmax_rows(&[1000.0f64, 1001.0, 1002.0], 3);
        let q = softmax_rows(&[0.0f64, 1.0, 2.0], 3);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_two_class_literal_form() {
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(Tensor::zeros(&[1, 2]), true);
        let ce = tape.cross_entropy(l, &[0], true).unwrap();
        assert!((tape.value(ce).data()[0] - 0.5 * 2f64.ln()).abs() < 1e-15);
        let ce2 = tape.cross_entropy(l, &[0], false).unwrap();
        assert!((tape.value(ce2).data()[0] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn label_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(Tensor::zeros(&[1, 3]), true);
        assert_eq!(
            tape.cross_entropy(l, &[3], true).unwrap_err(),
            TensorError::LabelOutOfRange { label: 3, classes: 3 }
        );
    }

    #[test]
    fn mse_mean_over_all_elements() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::from_vec(vec![2, 1, 1, 1], vec![0.3, 1.0]).unwrap(), true);
        let t = Tensor::from_vec(vec![2, 1, 1, 1], vec![0.5, 1.0]).unwrap();
        let l = tape.mse(p, &t).unwrap();
        assert!((tape.value(l).data()[0] - 0.02).abs() < 1e-15);
        let g = tape.backward(l).unwrap();
        let d = g.get(p).unwrap().data();
        assert!((d[0] - (-0.2)).abs() < 1e-15 && d[1] == 0.0);
    }
}
