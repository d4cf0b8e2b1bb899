//! A small, self-contained deep-learning library built around two ideas:
//!
//! * a **learnable piecewise-linear activation** — identity at the
//!   center, n learnable linear segments on each side (4n scalars:
//!   breakpoints and slopes), with exact analytic gradients for inputs,
//!   slopes, and breakpoints — able to degenerate to ReLU, leaky ReLU,
//!   or PReLU; and
//! * a **globally connected topology** — every block's output is
//!   average-pooled and concatenated into one final classifier, so every
//!   block receives gradient directly from the loss as well as through
//!   the blocks above it.
//!
//! Everything runs on the CPU in f64, deterministically for a fixed
//! seed. Every analytic gradient is cross-checked against a
//! finite-difference oracle in the test suite.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod grelu;
pub mod kernels;
pub mod layers;
pub mod net;
pub mod tensor;
pub mod trainer;

pub use error::{Error, IdxError, Result};
pub use tensor::Tensor;
