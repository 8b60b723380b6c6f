use std::fmt;

use crate::{Result, Scalar, TensorError};

/// Dense row-major tensor of rank 0 to 4. Image batches use `N, C, H, W`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_shape(shape).expect("valid shape");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        check_shape(shape).expect("valid shape");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape.to_vec(), self.data)
    }

    /// Dimensions padded on the left to rank 4.
    pub fn dims4(&self) -> [usize; 4] {
        let mut d = [1; 4];
        let off = 4 - self.shape.len().min(4);
        d[off..].copy_from_slice(&self.shape[..self.shape.len().min(4)]);
        d
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean_abs(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.abs().as_f64()).sum::<f64>() / self.data.len() as f64
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Precision conversion (used to lift `f32` weights into `f64` checks).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Batch slice `[start, end)` along the first axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        let n = *self.shape.first().ok_or_else(|| TensorError::InvalidShape {
            op: "slice_batch",
            shape: self.shape.clone(),
            reason: "rank-0 tensor has no batch axis".into(),
        })?;
        if start > end || end > n {
            return Err(TensorError::InvalidArgument {
                op: "slice_batch",
                reason: format!("range {start}..{end} out of bounds for batch {n}"),
            });
        }
        let per = self.data.len() / n.max(1);
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self::from_vec(shape, self.data[start * per..end * per].to_vec())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.len() > 4 {
        return Err(TensorError::InvalidShape {
            op: "tensor",
            shape: shape.to_vec(),
            reason: "rank above 4".into(),
        });
    }
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape {
            op: "tensor",
            shape: shape.to_vec(),
            reason: "zero extent".into(),
        });
    }
    Ok(())
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}
