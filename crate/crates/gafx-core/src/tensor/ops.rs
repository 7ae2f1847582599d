//! Flat namespace over all differentiable ops.

pub use super::conv::{conv1d, conv2d, conv_transpose1d, conv_transpose2d, max_pool2d};
pub use super::elementwise::{
    add, add_scalar, gelu, glu, mul, neg, relu, scale, sigmoid, sub, tanh,
};
pub use super::linalg::{add_channel_bias, add_row_bias, matmul, matmul_nt, transpose2d};
pub use super::loss::{bce_with_logits, softmax_cross_entropy};
pub use super::norm::{batch_norm, layer_norm, softmax_last, standardize};
pub use super::shape_ops::{
    concat, extract_patches, mean_all, mean_axis, narrow, pad_dim, reshape, sum_all,
    time_resample_linear,
};
pub use super::spectral::stft_mag;
