//! Headless feature extractors: a patch-based transformer encoder and a
//! residual convolutional network, both ending in a projection to a common
//! feature dimension.

mod resnet;
mod vit;

pub use resnet::{MicroResNet, MicroResNetConfig};
pub use vit::{MicroViT, MicroViTConfig, VitTrace};

use crate::error::Result;
use crate::tensor::Tensor;

/// `x·W + b` for a row matrix `x` of shape `[T×in]`, `W` of shape
/// `[in×out]` and `b` of shape `[out]`.
pub(crate) fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    x.matmul(w)?.add_row(b)
}

/// `linear` for a single feature vector.
pub(crate) fn linear_vec(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = x.numel();
    let out = b.numel();
    linear(&x.reshape(&[1, n])?, w, b)?.reshape(&[out])
}
