//! Dense tensors and a reverse-mode autodiff tape covering the operations a
//! VGG-style classifier with convolutional decoders needs: convolution,
//! transposed convolution, max pooling, nearest upsampling, batch norm,
//! dense layers, dropout and the two training losses.
//!
//! Values are recorded on a [`Tape`] as they are computed. Calling
//! [`Tape::backward`] consumes the tape and returns [`Gradients`] for every
//! recorded value that requires a gradient.
//!
//! ```
//! use sire_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_vec(vec![3], vec![-1.0, 2.0, 3.0]).unwrap(), true);
//! let y = tape.relu(x);
//! let s = tape.sum(y);
//! let grads = tape.backward(s).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 1.0]);
//! ```

mod error;
pub mod gradcheck;
mod ops;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::conv::{conv_out_extent, conv_transpose_out_extent};
pub use ops::norm::RunningStats;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
