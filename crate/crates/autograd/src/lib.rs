//! Small CPU tensor engine with reverse-mode differentiation.
//!
//! Provides exactly the layer set a range-image segmentation network needs:
//! linear / 1x1 layers, 3x3 same convolutions, 2x2 max-pooling, 2x2
//! transposed convolutions, channel concatenation, batch normalization,
//! set max-pooling and a channel softmax, plus Adam and a checkpoint format.
//!
//! ```
//! use rangeseg_autograd::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.variable(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use ops::norm::RunningStats;
pub use params::{he_uniform, Bound, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tape::{CustomOp, Mode, Tape, Var};
pub use tensor::Tensor;
