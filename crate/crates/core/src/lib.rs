// Indexed loops mirror the stencil arithmetic they implement; iterator
// rewrites obscure the windowed indexing these kernels are about.
#![allow(clippy::needless_range_loop)]

//! Content-adaptive filtering on dense rank-4 tensors: pixel-adaptive
//! convolution and its transposed variant with analytic gradients, the
//! classical filters they reduce to, mean-field CRF inference with dilated
//! pairwise branches, a minimal layer stack for guided upsampling, and the
//! file formats used to move data in and out.

pub mod crf;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod pac;
pub mod parallel;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use kernels::{KernelField, KernelSpec};
pub use pac::{FeatureScale, PacGradients, PacParams};
pub use tensor::{GridOffset, NeighborhoodView, Tensor4, WindowSpec};
