//! Minimal reverse-mode tensor engine.
//!
//! Every differentiable operation is a pair of plain functions: a forward pass
//! that returns whatever the backward pass needs, and a backward pass mapping
//! an output gradient to input (and parameter) gradients. Networks chain these
//! explicitly instead of recording a dynamic graph.

pub mod adam;
pub mod conv;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod param;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use layers::{BatchNorm2d, Conv2d, Mode};
pub use loss::{class_probability, softmax_cross_entropy};
pub use ops::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, dropout, leaky_relu, leaky_relu_backward,
    maxpool2, maxpool2_backward, upsample_nearest2, upsample_nearest2_backward, BatchNormCache,
    BatchStats, DropoutMask, Pooled,
};
pub use param::Parameter;
pub use tensor::{concat_channels, split_channels, Tensor};
