use crate::tape::Op;
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

pub const BN_EPS: f64 = 1e-5;

/// Per-channel running mean and (unbiased) variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: T,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: T::lit(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) struct BatchNormCtx<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
    shape: [usize; 4],
}

fn forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    train: bool,
) -> Result<(Tensor<T>, BatchNormCtx<T>)> {
    const OP: &str = "batchnorm2d";
    if x.rank() != 4 {
        return Err(TensorError::InvalidShape {
            op: OP,
            shape: x.shape().to_vec(),
            reason: "expected rank 4".into(),
        });
    }
    let [n, c, h, w] = x.dims4();
    if gamma.numel() != c || beta.numel() != c || stats.channels() != c {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    if train && n < 2 {
        return Err(TensorError::InvalidShape {
            op: OP,
            shape: x.shape().to_vec(),
            reason: "train-mode batch statistics need at least 2 samples".into(),
        });
    }
    let hw = h * w;
    let count = (n * hw) as f64;
    let xd = x.data();
    let mut inv_std = Vec::with_capacity(c);
    let mut means = Vec::with_capacity(c);
    for ch in 0..c {
        let (mean, istd) = if train {
            let mut sum = 0.0;
            for b in 0..n {
                sum += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for b in 0..n {
                sq += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                    .iter()
                    .map(|v| (v.as_f64() - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / count;
            let m = stats.momentum;
            stats.mean[ch] = (T::one() - m) * stats.mean[ch] + m * T::lit(mean);
            let unbiased = sq / (count - 1.0).max(1.0);
            stats.var[ch] = (T::one() - m) * stats.var[ch] + m * T::lit(unbiased);
            (mean, 1.0 / (var + BN_EPS).sqrt())
        } else {
            let var = stats.var[ch].as_f64();
            (stats.mean[ch].as_f64(), 1.0 / (var + BN_EPS).sqrt())
        };
        means.push(T::lit(mean));
        inv_std.push(T::lit(istd));
    }
    let mut xhat = vec![T::zero(); x.numel()];
    let mut y = vec![T::zero(); x.numel()];
    for b in 0..n {
        for ch in 0..c {
            let (m, s, g, bt) = (means[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for ((xh, yv), &xv) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&xd[r]) {
                *xh = (xv - m) * s;
                *yv = g * *xh + bt;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape().to_vec(), y)?,
        BatchNormCtx {
            xhat,
            inv_std,
            train,
            shape: [n, c, h, w],
        },
    ))
}

pub(crate) fn batchnorm2d_backward<T: Scalar>(
    gamma: &Tensor<T>,
    ctx: &BatchNormCtx<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = ctx.shape;
    let hw = h * w;
    let count = (n * hw) as f64;
    let dyd = dy.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = vec![T::zero(); dy.numel()];
    for ch in 0..c {
        let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
        for b in 0..n {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for (&g, &xh) in dyd[r.clone()].iter().zip(&ctx.xhat[r]) {
                sdy += g.as_f64();
                sdyx += (g * xh).as_f64();
            }
        }
        dgamma[ch] = T::lit(sdyx);
        dbeta[ch] = T::lit(sdy);
        let scale = gamma.data()[ch] * ctx.inv_std[ch];
        let (mdy, mdyx) = (T::lit(sdy / count), T::lit(sdyx / count));
        for b in 0..n {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for ((d, &g), &xh) in dx[r.clone()].iter_mut().zip(&dyd[r.clone()]).zip(&ctx.xhat[r]) {
                *d = if ctx.train {
                    scale * (g - mdy - xh * mdyx)
                } else {
                    scale * g
                };
            }
        }
    }
    let cshape = gamma.shape().to_vec();
    (
        Tensor::from_vec(dy.shape().to_vec(), dx).expect("shape"),
        Tensor::from_vec(cshape.clone(), dgamma).expect("shape"),
        Tensor::from_vec(cshape, dbeta).expect("shape"),
    )
}

impl<T: Scalar> Tape<T> {
    /// Per-channel batch normalisation of an `[N, C, H, W]` tensor. Train
    /// mode normalises with batch statistics and folds them into `stats`;
    /// eval mode uses `stats` unchanged.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        train: bool,
    ) -> Result<Var> {
        let (y, ctx) = forward(self.value(x), self.value(gamma), self.value(beta), stats, train)?;
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, ctx }, &[x, gamma, beta]))
    }
}
