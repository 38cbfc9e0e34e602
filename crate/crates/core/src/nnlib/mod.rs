//! From-scratch dense-network primitives with analytic gradients.

pub mod batchnorm;
pub mod dropout;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;

pub use batchnorm::{batch_norm_backward, batch_norm_eval, batch_norm_train, RunningStats};
pub use dropout::dropout_train;
pub use gradcheck::{finite_difference_gradient, relative_error};
pub use layers::{Activation, Layer, LayerKind, LayerParams, LayerSpec, Mode, Stack, StackCache};
pub use ops::{
    affine_backward, affine_forward, all_finite, argmax_rows, relu, relu_backward, sigmoid, sigmoid_backward, softmax,
    softmax_cross_entropy, Matrix,
};
pub use optim::{OptimizerKind, OptimizerState};
