use crate::tape::Op;
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

/// 2×2 max pool with stride 2. Returns the pooled values and, per output
/// cell, the flat input index of the first (row-major) maximum.
pub(crate) fn maxpool2d_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    if x.rank() != 4 {
        return Err(TensorError::InvalidShape {
            op: "maxpool2d",
            shape: x.shape().to_vec(),
            reason: "expected rank 4".into(),
        });
    }
    let [n, c, h, w] = x.dims4();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::InvalidShape {
            op: "maxpool2d",
            shape: x.shape().to_vec(),
            reason: "spatial extents must be even".into(),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                y.push(xd[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(vec![n, c, oh, ow], y)?, argmax))
}

pub(crate) fn maxpool2d_backward<T: Scalar>(x_shape: &[usize], argmax: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        d[idx as usize] += g;
    }
    dx
}

pub(crate) fn upsample2x_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(TensorError::InvalidShape {
            op: "upsample_nearest2d",
            shape: x.shape().to_vec(),
            reason: "expected rank 4".into(),
        });
    }
    let [n, c, h, w] = x.dims4();
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut y[plane * oh * ow..(plane + 1) * oh * ow];
        for iy in 0..h {
            for ix in 0..w {
                let v = src[iy * w + ix];
                let o = 2 * iy * ow + 2 * ix;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + ow] = v;
                dst[o + ow + 1] = v;
            }
        }
    }
    Tensor::from_vec(vec![n, c, oh, ow], y)
}

pub(crate) fn upsample2x_backward<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    let [n, c, h, w] = dx.dims4();
    let ow = 2 * w;
    let d = dx.data_mut();
    for plane in 0..n * c {
        let src = &dy.data()[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for iy in 0..h {
            for ix in 0..w {
                let o = 2 * iy * ow + 2 * ix;
                d[plane * h * w + iy * w + ix] = src[o] + src[o + 1] + src[o + ow] + src[o + ow + 1];
            }
        }
    }
    dx
}

impl<T: Scalar> Tape<T> {
    /// 2×2/stride-2 max pool. Ties route the gradient to the first maximum
    /// in row-major order.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = maxpool2d_forward(self.value(x))?;
        Ok(self.push(y, Op::MaxPool2d { x, argmax }, &[x]))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample_nearest2d(&mut self, x: Var) -> Result<Var> {
        let y = upsample2x_forward(self.value(x))?;
        Ok(self.push(y, Op::Upsample2x { x }, &[x]))
    }
}
