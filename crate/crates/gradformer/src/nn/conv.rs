//! Convolution layers with owned parameters.

use super::{init_conv_weight, zeros_param};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

/// Padded strided convolution layer. Weight layout `[cout, cin/groups, k, k]`.
pub struct Conv2dLayer<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        with_bias: bool,
    ) -> Self {
        assert!(groups >= 1 && cin % groups == 0 && cout % groups == 0, "bad group count for {name}");
        let fan_in = (cin / groups) * kernel * kernel;
        let weight = init_conv_weight(
            rng,
            format!("{name}.weight"),
            &[cout, cin / groups, kernel, kernel],
            fan_in,
        );
        let bias = with_bias.then(|| zeros_param(format!("{name}.bias"), &[cout]));
        Conv2dLayer { weight, bias, stride, padding, groups }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        tape.conv2d(
            x,
            self.weight.tensor(),
            self.bias.as_ref().map(|b| b.tensor()),
            self.stride,
            self.padding,
            self.groups,
        )
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Fractionally strided (transposed) convolution. Weight layout
/// `[cin, cout, k, k]`; output grows by `(in-1)·stride + k` per spatial dim.
pub struct ConvTranspose2dLayer<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    pub stride: usize,
}

impl<T: Scalar> ConvTranspose2dLayer<T> {
    pub fn new(
        rng: &mut Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        with_bias: bool,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight =
            init_conv_weight(rng, format!("{name}.weight"), &[cin, cout, kernel, kernel], fan_in);
        let bias = with_bias.then(|| zeros_param(format!("{name}.bias"), &[cout]));
        ConvTranspose2dLayer { weight, bias, stride }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        tape.conv_transpose2d(x, self.weight.tensor(), self.bias.as_ref().map(|b| b.tensor()), self.stride)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }
}
