use crate::scalar::matmul;
use crate::tape::Op;
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

type DenseGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

pub(crate) fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> DenseGrads<T> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[1];
    let dx = need_x.then(|| {
        let mut dx = vec![T::zero(); n * d];
        matmul(n, m, d, dy.data(), false, w.data(), true, &mut dx, false);
        Tensor::from_vec(vec![n, d], dx).expect("shape")
    });
    let dw = need_w.then(|| {
        let mut dw = vec![T::zero(); d * m];
        matmul(d, n, m, x.data(), true, dy.data(), false, &mut dw, false);
        Tensor::from_vec(vec![d, m], dw).expect("shape")
    });
    let db = need_b.then(|| {
        let mut db = vec![T::zero(); m];
        for row in dy.data().chunks_exact(m) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        Tensor::from_vec(vec![m], db).expect("shape")
    });
    (dx, dw, db)
}

impl<T: Scalar> Tape<T> {
    /// Fully connected layer `x · w + b` with `x: [N, D]`, `w: [D, M]`,
    /// `b: [M]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let (n, d, m) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
        if bv.numel() != m {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                lhs: wv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut y: Vec<T> = bv.data().iter().copied().cycle().take(n * m).collect();
        matmul(n, d, m, xv.data(), false, wv.data(), false, &mut y, true);
        let y = Tensor::from_vec(vec![n, m], y)?;
        Ok(self.push(y, Op::Dense { x, w, b }, &[x, w, b]))
    }
}
