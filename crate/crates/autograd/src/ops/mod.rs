//! Forward and backward kernels behind the [`Tape`](crate::Tape) operations.
//!
//! Kernels work on plain slices. All reductions run in a fixed sequential
//! order; the batch loops in `conv` may run on rayon but each image's
//! contribution is summed in image order afterwards.

pub mod conv;
pub mod dense;
pub mod norm;
pub mod pool;
