//! Forward and backward passes of the layers the trainer is built from.

mod activation;
mod conv;
mod linear;

pub use activation::{maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, softmax_cross_entropy};
pub use conv::{
    conv2d_forward, conv2d_grad_input, conv2d_grad_weight_exact, conv2d_grad_weight_hosvd, conv2d_grad_weight_svd,
    ConvSpec, ConvWeights,
};
pub use linear::{
    linear_forward, linear_grad_input, linear_grad_weight, linear_grad_weight_svd, LinearWeights,
};
