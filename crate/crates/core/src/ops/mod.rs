//! Layer kernels with hand-paired forward and backward passes.

pub mod conv;
pub mod counters;
pub mod dense;
pub mod pool;

pub use conv::{conv2d_backward, conv2d_backward_params, conv2d_forward};
pub use dense::{
    fc_backward, fc_backward_params, fc_forward, relu_backward, relu_forward, sgd_update,
    sgd_update_slice, sigmoid_backward, sigmoid_forward, softmax, softmax_xent, XentOutput,
};
pub use pool::{pool_backward, pool_forward, PoolKind, PoolRecord};

use crate::tensor::Tensor;

/// Gradients produced by one layer's backward pass.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub input_grad: Tensor,
    /// One entry per parameter tensor, in the layer's parameter order.
    pub param_grads: Vec<Tensor>,
}
