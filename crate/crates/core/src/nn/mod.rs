//! Layer primitives with hand-written forward and backward passes.

mod activation;
mod adam;
mod conv;
mod dense;
mod gemm;
mod params;
mod pool;
mod tensor;

pub use activation::{dropout_apply, relu, relu_backward, softmax, softmax_cross_entropy, DropoutMask};
pub use adam::{adam_step, AdamConfig};
pub use conv::{conv2d_backward, conv2d_forward};
pub use dense::{fc_backward, fc_forward};
pub use params::{truncated_normal, Gradients, LayerParams, Moments, INIT_BIAS, INIT_STDDEV};
pub use pool::{maxpool_backward, maxpool_forward, Pooled};
pub use tensor::Tensor;
