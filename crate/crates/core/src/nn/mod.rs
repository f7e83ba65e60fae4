//! The fixed layer set needed by the feature extractors: convolution, max
//! pooling, ReLU, fully connected, softmax cross-entropy, momentum SGD, plus a
//! finite-difference gradient oracle.

mod activation;
mod conv;
mod gemm;
mod gradcheck;
mod linear;
mod loss;
mod optim;
mod pool;

pub use activation::{relu, relu_backward};
pub(crate) use activation::{relu_inplace, relu_mask_inplace};
pub(crate) use conv::init_conv;
pub use conv::{conv2d, conv2d_backward, conv_output_extent, Conv2d, ConvCache};
pub use gradcheck::{numeric_gradient, relative_error};
pub use linear::{linear, linear_backward, Linear};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::{sgd_step, OptimizerState};
pub use pool::{maxpool2d, maxpool2d_backward, PoolRouting};

use crate::tensor::Tensor;

/// Gradients of a layer's scalar objective with respect to its input and
/// each of its parameters (in parameter declaration order).
#[derive(Clone, Debug)]
pub struct LayerGradients {
    pub d_input: Option<Tensor>,
    pub d_params: Vec<Tensor>,
}
