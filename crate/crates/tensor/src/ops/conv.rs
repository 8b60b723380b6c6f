//! 2-D convolution and its adjoint via im2col + GEMM.
//!
//! Images in a batch are processed in chunks so that each GEMM sees at
//! least [`TARGET_COLS`] columns; the 4×4 and 2×2 stages of the network
//! would otherwise run tiny, badly-shaped products.

use crate::scalar::matmul;
use crate::tape::Op;
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

const TARGET_COLS: usize = 2048;

/// Output extent of a convolution, or `None` when the window does not fit.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if k == 0 || stride == 0 || input + 2 * pad < k {
        return None;
    }
    Some((input + 2 * pad - k) / stride + 1)
}

/// Output extent of a transposed convolution.
pub fn conv_transpose_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if k == 0 || stride == 0 || input == 0 {
        return None;
    }
    let full = (input - 1) * stride + k;
    if full <= 2 * pad {
        return None;
    }
    Some(full - 2 * pad)
}

/// Patch geometry shared by im2col and col2im. The "image" side has
/// `c×h×w` elements; the patch side has `oh×ow` columns.
#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid `o` range for kernel offset `kk` along an axis of length `len`.
    fn valid(&self, kk: usize, len: usize, out: usize) -> (usize, usize) {
        // Need 0 <= o*stride + kk - pad < len.
        let s = self.stride;
        let lo = if kk >= self.pad {
            0
        } else {
            (self.pad - kk).div_ceil(s)
        };
        let hi = if len + self.pad > kk {
            ((len + self.pad - kk - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Writes this image's patches into columns `[col_off, col_off+cols())`
    /// of a row-major matrix with leading dimension `ld`.
    fn im2col<T: Scalar>(&self, img: &[T], dst: &mut [T], ld: usize, col_off: usize) {
        let (k, s, pad) = (self.k, self.stride, self.pad);
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                let (ylo, yhi) = self.valid(ki, self.h, self.oh);
                for kj in 0..k {
                    let (xlo, xhi) = self.valid(kj, self.w, self.ow);
                    let row = (c * k + ki) * k + kj;
                    let base = row * ld + col_off;
                    let out = &mut dst[base..base + self.cols()];
                    for oy in 0..self.oh {
                        let orow = &mut out[oy * self.ow..(oy + 1) * self.ow];
                        if oy < ylo || oy >= yhi {
                            orow.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let iy = oy * s + ki - pad;
                        let src = &plane[iy * self.w..(iy + 1) * self.w];
                        orow[..xlo].iter_mut().for_each(|v| *v = T::zero());
                        orow[xhi..].iter_mut().for_each(|v| *v = T::zero());
                        if s == 1 {
                            let ix0 = xlo + kj - pad;
                            orow[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                orow[ox] = src[ox * s + kj - pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geom::im2col`]: accumulates columns back into `img`.
    fn col2im<T: Scalar>(&self, src: &[T], ld: usize, col_off: usize, img: &mut [T]) {
        let (k, s, pad) = (self.k, self.stride, self.pad);
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                let (ylo, yhi) = self.valid(ki, self.h, self.oh);
                for kj in 0..k {
                    let (xlo, xhi) = self.valid(kj, self.w, self.ow);
                    let row = (c * k + ki) * k + kj;
                    let base = row * ld + col_off;
                    let cols = &src[base..base + self.cols()];
                    for oy in ylo..yhi {
                        let iy = oy * s + ki - pad;
                        let drow = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let crow = &cols[oy * self.ow..(oy + 1) * self.ow];
                        for ox in xlo..xhi {
                            drow[ox * s + kj - pad] += crow[ox];
                        }
                    }
                }
            }
        }
    }
}

fn chunk_len(n: usize, cols: usize) -> usize {
    (TARGET_COLS / cols.max(1)).clamp(1, n)
}

/// Copies `[b0, b1)` images of an `[N, c, hw]` buffer into a `[c, B*hw]` matrix.
fn gather<T: Scalar>(src: &[T], c: usize, hw: usize, b0: usize, b1: usize, dst: &mut [T]) {
    let ld = (b1 - b0) * hw;
    for b in b0..b1 {
        for ch in 0..c {
            let s = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let off = ch * ld + (b - b0) * hw;
            dst[off..off + hw].copy_from_slice(s);
        }
    }
}

/// Inverse of [`gather`]: writes (or adds) a `[c, B*hw]` matrix into `[N, c, hw]`.
fn scatter<T: Scalar>(src: &[T], c: usize, hw: usize, b0: usize, b1: usize, dst: &mut [T], add: bool) {
    let ld = (b1 - b0) * hw;
    for b in b0..b1 {
        for ch in 0..c {
            let off = ch * ld + (b - b0) * hw;
            let d = &mut dst[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            if add {
                for (x, &y) in d.iter_mut().zip(&src[off..off + hw]) {
                    *x += y;
                }
            } else {
                d.copy_from_slice(&src[off..off + hw]);
            }
        }
    }
}

fn check_args(op: &'static str, k: usize, stride: usize) -> Result<()> {
    if k == 0 || stride == 0 {
        return Err(TensorError::InvalidArgument {
            op,
            reason: format!("kernel {k} and stride {stride} must be >= 1"),
        });
    }
    Ok(())
}

fn rank4<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    if t.rank() != 4 {
        return Err(TensorError::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            reason: "expected rank 4".into(),
        });
    }
    Ok(t.dims4())
}

struct ConvShapes {
    n: usize,
    cin: usize,
    cout: usize,
    geom: Geom,
}

fn conv_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvShapes> {
    const OP: &str = "conv2d";
    let [n, cin, h, wd] = rank4(OP, x)?;
    let [cout, wcin, k, k2] = rank4(OP, w)?;
    check_args(OP, k, stride)?;
    if wcin != cin || k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let (Some(oh), Some(ow)) = (
        conv_out_extent(h, k, stride, pad),
        conv_out_extent(wd, k, stride, pad),
    ) else {
        return Err(TensorError::InvalidShape {
            op: OP,
            shape: x.shape().to_vec(),
            reason: format!("kernel {k} with padding {pad} does not fit"),
        });
    };
    Ok(ConvShapes {
        n,
        cin,
        cout,
        geom: Geom {
            c: cin,
            h,
            w: wd,
            k,
            stride,
            pad,
            oh,
            ow,
        },
    })
}

fn conv_transpose_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvShapes> {
    const OP: &str = "conv_transpose2d";
    let [n, cin, h, wd] = rank4(OP, x)?;
    let [wcin, cout, k, k2] = rank4(OP, w)?;
    check_args(OP, k, stride)?;
    if wcin != cin || k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let (Some(oh), Some(ow)) = (
        conv_transpose_out_extent(h, k, stride, pad),
        conv_transpose_out_extent(wd, k, stride, pad),
    ) else {
        return Err(TensorError::InvalidShape {
            op: OP,
            shape: x.shape().to_vec(),
            reason: format!("kernel {k} with padding {pad} gives an empty output"),
        });
    };
    if oh + 2 * pad < k || conv_out_extent(oh, k, stride, pad) != Some(h) {
        return Err(TensorError::InvalidShape {
            op: OP,
            shape: x.shape().to_vec(),
            reason: format!("output {oh}x{ow} is not a legal conv input for kernel {k}"),
        });
    }
    Ok(ConvShapes {
        n,
        cin,
        cout,
        // The image side of the patch geometry is the transposed conv's
        // output; the column side is its input.
        geom: Geom {
            c: cout,
            h: oh,
            w: ow,
            k,
            stride,
            pad,
            oh: h,
            ow: wd,
        },
    })
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let s = conv_shapes(x, w, stride, pad)?;
    let g = s.geom;
    let (ckk, ohw, ihw) = (g.rows(), g.cols(), g.h * g.w);
    let mut y = vec![T::zero(); s.n * s.cout * ohw];
    let chunk = chunk_len(s.n, ohw);
    let mut cols = vec![T::zero(); ckk * chunk * ohw];
    let mut buf = vec![T::zero(); s.cout * chunk * ohw];
    let xd = x.data();
    for b0 in (0..s.n).step_by(chunk) {
        let b1 = (b0 + chunk).min(s.n);
        let bc = (b1 - b0) * ohw;
        for b in b0..b1 {
            g.im2col(&xd[b * s.cin * ihw..(b + 1) * s.cin * ihw], &mut cols, bc, (b - b0) * ohw);
        }
        if b1 - b0 == 1 {
            let out = &mut y[b0 * s.cout * ohw..b1 * s.cout * ohw];
            matmul(s.cout, ckk, bc, w.data(), false, &cols[..ckk * bc], false, out, false);
        } else {
            let out = &mut buf[..s.cout * bc];
            matmul(s.cout, ckk, bc, w.data(), false, &cols[..ckk * bc], false, out, false);
            scatter(out, s.cout, ohw, b0, b1, &mut y, false);
        }
    }
    Tensor::from_vec(vec![s.n, s.cout, g.oh, g.ow], y)
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let s = conv_shapes(x, w, stride, pad).expect("shapes validated in forward");
    let g = s.geom;
    let (ckk, ohw, ihw) = (g.rows(), g.cols(), g.h * g.w);
    let chunk = chunk_len(s.n, ohw);
    let mut cols = vec![T::zero(); ckk * chunk * ohw];
    let mut dyc = vec![T::zero(); s.cout * chunk * ohw];
    let mut dx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.numel()]);
    let xd = x.data();
    for b0 in (0..s.n).step_by(chunk) {
        let b1 = (b0 + chunk).min(s.n);
        let bc = (b1 - b0) * ohw;
        gather(dy.data(), s.cout, ohw, b0, b1, &mut dyc);
        let dyc = &dyc[..s.cout * bc];
        if let Some(dw) = dw.as_mut() {
            for b in b0..b1 {
                g.im2col(&xd[b * s.cin * ihw..(b + 1) * s.cin * ihw], &mut cols, bc, (b - b0) * ohw);
            }
            matmul(s.cout, bc, ckk, dyc, false, &cols[..ckk * bc], true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dcols = &mut cols[..ckk * bc];
            matmul(ckk, s.cout, bc, w.data(), true, dyc, false, dcols, false);
            for b in b0..b1 {
                g.col2im(dcols, bc, (b - b0) * ohw, &mut dx[b * s.cin * ihw..(b + 1) * s.cin * ihw]);
            }
        }
    }
    (
        dx.map(|d| Tensor::from_vec(x.shape().to_vec(), d).expect("shape")),
        dw.map(|d| Tensor::from_vec(w.shape().to_vec(), d).expect("shape")),
    )
}

pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let s = conv_transpose_shapes(x, w, stride, pad)?;
    let g = s.geom;
    let (rows, ihw, ohw) = (g.rows(), g.cols(), g.h * g.w);
    let chunk = chunk_len(s.n, ihw);
    let mut xc = vec![T::zero(); s.cin * chunk * ihw];
    let mut cols = vec![T::zero(); rows * chunk * ihw];
    let mut y = vec![T::zero(); s.n * s.cout * ohw];
    for b0 in (0..s.n).step_by(chunk) {
        let b1 = (b0 + chunk).min(s.n);
        let bc = (b1 - b0) * ihw;
        gather(x.data(), s.cin, ihw, b0, b1, &mut xc);
        let cols = &mut cols[..rows * bc];
        matmul(rows, s.cin, bc, w.data(), true, &xc[..s.cin * bc], false, cols, false);
        for b in b0..b1 {
            g.col2im(cols, bc, (b - b0) * ihw, &mut y[b * s.cout * ohw..(b + 1) * s.cout * ohw]);
        }
    }
    Tensor::from_vec(vec![s.n, s.cout, g.h, g.w], y)
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let s = conv_transpose_shapes(x, w, stride, pad).expect("shapes validated in forward");
    let g = s.geom;
    let (rows, ihw, ohw) = (g.rows(), g.cols(), g.h * g.w);
    let chunk = chunk_len(s.n, ihw);
    let mut cols = vec![T::zero(); rows * chunk * ihw];
    let mut xc = vec![T::zero(); s.cin * chunk * ihw];
    let mut dx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.numel()]);
    for b0 in (0..s.n).step_by(chunk) {
        let b1 = (b0 + chunk).min(s.n);
        let bc = (b1 - b0) * ihw;
        for b in b0..b1 {
            g.im2col(&dy.data()[b * s.cout * ohw..(b + 1) * s.cout * ohw], &mut cols, bc, (b - b0) * ihw);
        }
        let cols = &cols[..rows * bc];
        if let Some(dw) = dw.as_mut() {
            gather(x.data(), s.cin, ihw, b0, b1, &mut xc);
            matmul(s.cin, bc, rows, &xc[..s.cin * bc], false, cols, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxc = &mut xc[..s.cin * bc];
            matmul(s.cin, rows, bc, w.data(), false, cols, false, dxc, false);
            scatter(dxc, s.cin, ihw, b0, b1, dx, false);
        }
    }
    (
        dx.map(|d| Tensor::from_vec(x.shape().to_vec(), d).expect("shape")),
        dw.map(|d| Tensor::from_vec(w.shape().to_vec(), d).expect("shape")),
    )
}

impl<T: Scalar> Tape<T> {
    /// Bias-free 2-D convolution. `x: [N, Cin, H, W]`, `w: [Cout, Cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = conv2d_forward(self.value(x), self.value(w), stride, pad)?;
        Ok(self.push(y, Op::Conv2d { x, w, stride, pad }, &[x, w]))
    }

    /// Transposed convolution, the adjoint of [`Tape::conv2d`] in its input.
    /// `x: [N, Cin, H, W]`, `w: [Cin, Cout, k, k]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = conv_transpose2d_forward(self.value(x), self.value(w), stride, pad)?;
        Ok(self.push(y, Op::ConvTranspose2d { x, w, stride, pad }, &[x, w]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [n, cin, h, wd] = x.dims4();
        let [cout, _, k, _] = w.dims4();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut y = Tensor::zeros(&[n, cout, oh, ow]);
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * cin + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((co * cin + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                        y.data_mut()[((b * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn extents() {
        assert_eq!(conv_out_extent(32, 3, 1, 1), Some(32));
        assert_eq!(conv_out_extent(5, 3, 2, 0), Some(2));
        assert_eq!(conv_out_extent(1, 3, 1, 0), None);
        assert_eq!(conv_transpose_out_extent(32, 3, 1, 1), Some(32));
        assert_eq!(conv_transpose_out_extent(2, 3, 2, 0), Some(5));
    }

    #[test]
    fn matches_naive_loops_across_strides_and_chunks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, cin, cout, h, k, stride, pad) in &[
            (1, 1, 1, 3, 3, 1, 1),
            (3, 2, 4, 5, 3, 1, 1),
            (2, 3, 2, 6, 3, 2, 1),
            (5, 2, 3, 4, 2, 1, 0),
            (70, 1, 2, 2, 3, 1, 1),
        ] {
            let x = rand_tensor(&[n, cin, h, h], &mut rng);
            let w = rand_tensor(&[cout, cin, k, k], &mut rng);
            let got = conv2d_forward(&x, &w, stride, pad).unwrap();
            let want = naive_conv(&x, &w, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[3, 1, 3, 3]);
        let err = conv2d_forward(&x, &w, 1, 1).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vec![1, 2, 4, 4],
                rhs: vec![3, 1, 3, 3]
            }
        );
        let wt = Tensor::<f32>::zeros(&[3, 1, 3, 3]);
        assert!(matches!(
            conv_transpose2d_forward(&x, &wt, 1, 1),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 1, 1]);
        let w = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        assert!(matches!(
            conv2d_forward(&x, &w, 1, 1),
            Err(TensorError::InvalidShape { .. })
        ));
    }

    #[test]
    fn adjoint_identity_with_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, cin, cout, h, k, stride, pad) in
            &[(2, 3, 4, 5, 3, 1, 1), (1, 2, 2, 5, 3, 2, 1), (3, 1, 2, 4, 2, 2, 0)]
        {
            let x = rand_tensor(&[n, cin, h, h], &mut rng);
            let w = rand_tensor(&[cout, cin, k, k], &mut rng);
            let y = conv2d_forward(&x, &w, stride, pad).unwrap();
            let g = rand_tensor(y.shape(), &mut rng);
            let Ok(xt) = conv_transpose2d_forward(&g, &w, stride, pad) else {
                continue;
            };
            if xt.shape() != x.shape() {
                continue;
            }
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }
}
