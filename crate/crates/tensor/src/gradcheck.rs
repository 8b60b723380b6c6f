//! Central finite-difference checks of the tape's analytic gradients.
//!
//! Every check runs in `f64`. Non-scalar outputs are reduced with a fixed
//! random projection so every output element contributes to the checked
//! gradient. Piecewise-linear ops (ReLU, max pool) get inputs that stay at
//! least `10·eps` away from their kinks.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Result, RunningStats, Tape, Tensor, TensorError, Var};

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

/// Denominator floor of the relative error, so that gradients that are
/// exactly zero analytically compare on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<5} {:<28} elems={:<5} max_rel={:.3e} max_abs={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.max_rel_error,
            self.max_abs_error
        )
    }
}

/// Operation under test, with its non-shape hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedOp {
    Conv2d { stride: usize, pad: usize },
    ConvTranspose2d { stride: usize, pad: usize },
    MaxPool2d,
    UpsampleNearest2d,
    Relu,
    BatchNormTrain,
    BatchNormEval,
    Dense,
    Dropout,
    Add,
    PadChannels { channels: usize },
    Flatten,
    CrossEntropy { class_average: bool },
    Mse,
    /// `sum(relu(conv2d(x, w)))` with padding 1.
    ConvReluSum,
}

impl CheckedOp {
    /// Number of input shapes the op expects.
    pub fn arity(&self) -> usize {
        match self {
            CheckedOp::Conv2d { .. }
            | CheckedOp::ConvTranspose2d { .. }
            | CheckedOp::Add
            | CheckedOp::ConvReluSum => 2,
            CheckedOp::BatchNormTrain | CheckedOp::BatchNormEval | CheckedOp::Dense => 3,
            _ => 1,
        }
    }
}

/// Checks an arbitrary function of several inputs. `f` must be
/// deterministic; its output is projected to a scalar when needed.
pub fn check_fn<F>(name: &str, inputs: &[Tensor<f64>], seed: u64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut projection: Option<Tensor<f64>> = None;
    let mut eval = |values: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Option<Vec<Tensor<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), with_grad)).collect();
        let out = f(&mut tape, &vars)?;
        let root = if tape.value(out).numel() == 1 {
            out
        } else {
            let shape = tape.value(out).shape().to_vec();
            let w = projection.get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
                Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))
            });
            tape.weighted_sum(out, w)?
        };
        let value = tape.value(root).data()[0];
        if !with_grad {
            return Ok((value, None));
        }
        let mut grads = tape.backward(root)?;
        let g = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, Some(g)))
    };

    let (_, analytic) = eval(inputs, true)?;
    let analytic = analytic.expect("requested gradients");
    let mut report = GradcheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        tolerance: TOLERANCE,
    };
    let mut probe = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[which].numel() {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + EPS;
            let (plus, _) = eval(&probe, false)?;
            probe[which].data_mut()[i] = orig - EPS;
            let (minus, _) = eval(&probe, false)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * EPS);
            let a = grad.data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Distinct values spaced well beyond `2·EPS`, randomly permuted.
fn tie_free(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.013 + 0.0041).collect();
    vals.shuffle(rng);
    Tensor::from_vec(shape.to_vec(), vals).expect("shape")
}

/// Values with magnitude in `[0.05, 1)`, clear of the ReLU kink.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Runs one op instance with inputs of the given shapes.
pub fn gradcheck(op: CheckedOp, shapes: &[&[usize]], seed: u64) -> Result<GradcheckReport> {
    if shapes.len() != op.arity() {
        return Err(TensorError::InvalidArgument {
            op: "gradcheck",
            reason: format!("{op:?} takes {} shapes, got {}", op.arity(), shapes.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = format!("{op:?} {shapes:?}");
    match op {
        CheckedOp::Conv2d { stride, pad } => {
            let inputs = [uniform(shapes[0], &mut rng), uniform(shapes[1], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| t.conv2d(v[0], v[1], stride, pad))
        }
        CheckedOp::ConvTranspose2d { stride, pad } => {
            let inputs = [uniform(shapes[0], &mut rng), uniform(shapes[1], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| t.conv_transpose2d(v[0], v[1], stride, pad))
        }
        CheckedOp::MaxPool2d => {
            let inputs = [tie_free(shapes[0], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| t.maxpool2d(v[0]))
        }
        CheckedOp::UpsampleNearest2d => {
            let inputs = [uniform(shapes[0], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| t.upsample_nearest2d(v[0]))
        }
        CheckedOp::Relu => {
            let inputs = [off_kink(shapes[0], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| Ok(t.relu(v[0])))
        }
        CheckedOp::BatchNormTrain | CheckedOp::BatchNormEval => {
            let train = op == CheckedOp::BatchNormTrain;
            let c = shapes[1].iter().product();
            let inputs = [
                uniform(shapes[0], &mut rng),
                Tensor::from_fn(shapes[1], |_| rng.random_range(0.5..1.5)),
                uniform(shapes[2], &mut rng),
            ];
            let mut fixed = RunningStats::new(c);
            fixed.mean = (0..c).map(|i| 0.1 * i as f64 - 0.05).collect();
            fixed.var = (0..c).map(|i| 0.5 + 0.25 * i as f64).collect();
            check_fn(&name, &inputs, seed, move |t, v| {
                let mut stats = fixed.clone();
                t.batchnorm2d(v[0], v[1], v[2], &mut stats, train)
            })
        }
        CheckedOp::Dense => {
            let inputs = [
                uniform(shapes[0], &mut rng),
                uniform(shapes[1], &mut rng),
                uniform(shapes[2], &mut rng),
            ];
            check_fn(&name, &inputs, seed, |t, v| t.dense(v[0], v[1], v[2]))
        }
        CheckedOp::Dropout => {
            let inputs = [uniform(shapes[0], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
                t.dropout(v[0], 0.5, &mut mask_rng, true)
            })
        }
        CheckedOp::Add => {
            let inputs = [uniform(shapes[0], &mut rng), uniform(shapes[1], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| t.add(v[0], v[1]))
        }
        CheckedOp::PadChannels { channels } => {
            let inputs = [uniform(shapes[0], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| t.pad_channels(v[0], channels))
        }
        CheckedOp::Flatten => {
            let inputs = [uniform(shapes[0], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| t.flatten(v[0]))
        }
        CheckedOp::CrossEntropy { class_average } => {
            let [n, m] = [shapes[0][0], shapes[0][1]];
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
            let inputs = [uniform(shapes[0], &mut rng)];
            check_fn(&name, &inputs, seed, move |t, v| t.cross_entropy(v[0], &labels, class_average))
        }
        CheckedOp::Mse => {
            let target = Tensor::from_fn(shapes[0], |_| rng.random_range(0.0..1.0));
            let inputs = [uniform(shapes[0], &mut rng)];
            check_fn(&name, &inputs, seed, move |t, v| t.mse(v[0], &target))
        }
        CheckedOp::ConvReluSum => {
            let inputs = [uniform(shapes[0], &mut rng), uniform(shapes[1], &mut rng)];
            check_fn(&name, &inputs, seed, |t, v| {
                let y = t.conv2d(v[0], v[1], 1, 1)?;
                let r = t.relu(y);
                Ok(t.sum(r))
            })
        }
    }
}

/// The standard battery: every differentiable op at small shapes.
pub fn battery(seed: u64) -> Result<Vec<GradcheckReport>> {
    let cases: Vec<(CheckedOp, Vec<Vec<usize>>)> = vec![
        (CheckedOp::Conv2d { stride: 1, pad: 1 }, vec![vec![1, 2, 5, 5], vec![3, 2, 3, 3]]),
        (CheckedOp::Conv2d { stride: 2, pad: 1 }, vec![vec![2, 2, 5, 5], vec![2, 2, 3, 3]]),
        (CheckedOp::ConvTranspose2d { stride: 1, pad: 1 }, vec![vec![1, 3, 4, 4], vec![3, 2, 3, 3]]),
        (CheckedOp::ConvTranspose2d { stride: 2, pad: 1 }, vec![vec![2, 2, 3, 3], vec![2, 2, 3, 3]]),
        (CheckedOp::MaxPool2d, vec![vec![2, 2, 4, 4]]),
        (CheckedOp::UpsampleNearest2d, vec![vec![2, 2, 2, 3]]),
        (CheckedOp::Relu, vec![vec![2, 3, 4]]),
        (CheckedOp::BatchNormTrain, vec![vec![3, 2, 3, 3], vec![2], vec![2]]),
        (CheckedOp::BatchNormEval, vec![vec![3, 2, 3, 3], vec![2], vec![2]]),
        (CheckedOp::Dense, vec![vec![3, 5], vec![5, 4], vec![4]]),
        (CheckedOp::Dropout, vec![vec![4, 6]]),
        (CheckedOp::Add, vec![vec![2, 3, 2, 2], vec![2, 3, 2, 2]]),
        (CheckedOp::PadChannels { channels: 4 }, vec![vec![2, 2, 2, 2]]),
        (CheckedOp::Flatten, vec![vec![2, 3, 2, 2]]),
        (CheckedOp::CrossEntropy { class_average: true }, vec![vec![4, 5]]),
        (CheckedOp::CrossEntropy { class_average: false }, vec![vec![4, 5]]),
        (CheckedOp::Mse, vec![vec![2, 1, 3, 3]]),
        (CheckedOp::ConvReluSum, vec![vec![1, 2, 4, 4], vec![2, 2, 3, 3]]),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(i, (op, shapes))| {
            let shapes: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
            gradcheck(*op, &shapes, seed.wrapping_add(i as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // The constant copy hides half of the dependence on x from the tape.
        let x = Tensor::from_vec(vec![3], vec![0.2, -0.4, 0.9]).unwrap();
        let ok = check_fn("ok", std::slice::from_ref(&x), 0, |t, v| Ok(t.scale(v[0], 3.0))).unwrap();
        assert!(ok.passed());
        let frozen = check_fn("frozen", &[x], 0, |t, v| {
            let c = t.constant(t.value(v[0]).clone());
            t.add(v[0], c)
        })
        .unwrap();
        assert!(!frozen.passed(), "{frozen}");
    }

    #[test]
    fn arity_is_validated() {
        assert!(gradcheck(CheckedOp::Dense, &[&[2, 2]], 0).is_err());
    }
}
