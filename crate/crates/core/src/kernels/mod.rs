//! CPU compute kernels. Every kernel reduces floating-point sums in a
//! fixed order, so results are identical across runs and thread counts.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

mod batchnorm;
mod conv;
mod fc;
mod gap;
mod matmul;
mod pool;
mod softmax;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnCache};
pub use conv::{conv2d_backward, conv2d_forward};
pub use fc::{fc_backward, fc_forward};
pub use gap::{gap_backward, gap_forward};
pub use pool::{maxpool2_backward, maxpool2_forward, PoolOutput};
pub use softmax::{softmax_xent, XentOutput};

/// Whether a forward pass uses batch statistics (training) or frozen
/// running statistics (evaluation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A backward pass result: the gradient flowing to the layer's input plus
/// named parameter gradients. A BTreeMap keeps iteration order stable.
pub struct LayerGrad {
    pub input_grad: Tensor,
    pub param_grads: BTreeMap<String, Tensor>,
}

impl LayerGrad {
    pub fn new(input_grad: Tensor) -> Self {
        Self {
            input_grad,
            param_grads: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: &str, grad: Tensor) -> Self {
        self.param_grads.insert(name.to_string(), grad);
        self
    }
}
