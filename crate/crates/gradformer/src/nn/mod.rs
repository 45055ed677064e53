//! Neural layers built on the tape: convolutions, instance normalization,
//! the convolutional MLP, and strided patch embedding.
//!
//! Construction is deterministic: every layer draws its weights from the
//! generator it is handed, in declaration order, element by element — so a
//! model built twice from the same seed is bit-identical.

mod conv;
mod embed;
mod mlp;
mod norm;

pub use conv::{Conv2dLayer, ConvTranspose2dLayer};
pub use embed::PatchEmbedLayer;
pub use mlp::ConvMLPLayer;
pub use norm::InstanceNorm2dLayer;

use crate::rng::Rng;
use crate::tensor::{Parameter, Scalar, Tensor};

/// Fan-in–scaled normal weight init: std = √(2 / fan_in), drawn in flat
/// row-major order from the shared stream.
pub(crate) fn init_conv_weight<T: Scalar>(
    rng: &mut Rng,
    name: String,
    shape: &[usize],
    fan_in: usize,
) -> Parameter<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let t = Tensor::from_fn(shape, |_| T::from_f64(rng.normal_scaled(std)));
    Parameter::new(name, t)
}

pub(crate) fn zeros_param<T: Scalar>(name: String, shape: &[usize]) -> Parameter<T> {
    Parameter::new(name, Tensor::zeros(shape))
}

pub(crate) fn ones_param<T: Scalar>(name: String, shape: &[usize]) -> Parameter<T> {
    Parameter::new(name, Tensor::full(shape, T::one()))
}
