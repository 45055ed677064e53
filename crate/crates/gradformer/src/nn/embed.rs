//! Strided patch embedding: downsampling convolution + instance norm.

use super::{Conv2dLayer, InstanceNorm2dLayer};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

/// Overlapping patch embedding. The first encoder stage uses a 7×7/stride-4
/// kernel (pad 3); later stages use 3×3/stride-2 (pad 1). Each is followed by
/// instance normalization so stage inputs arrive standardized.
pub struct PatchEmbedLayer<T: Scalar> {
    pub conv: Conv2dLayer<T>,
    pub norm: InstanceNorm2dLayer<T>,
}

impl<T: Scalar> PatchEmbedLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        eps: f64,
    ) -> Self {
        PatchEmbedLayer {
            conv: Conv2dLayer::new(rng, &format!("{name}.conv"), cin, cout, kernel, stride, padding, 1, true),
            norm: InstanceNorm2dLayer::new(&format!("{name}.norm"), cout, eps),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.conv.forward(tape, x)?;
        self.norm.forward(tape, &h)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.conv.collect_params(out);
        self.norm.collect_params(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_one_downsamples_by_four() {
        let mut rng = Rng::new(21);
        let e = PatchEmbedLayer::<f32>::new(&mut rng, "e1", 3, 16, 7, 4, 3, 1e-5);
        let tape = Tape::no_grad();
        let x = Tensor::from_fn(&[2, 3, 64, 64], |_| rng.uniform(0.0, 1.0) as f32);
        let y = e.forward(&tape, &x).unwrap();
        assert_eq!(y.shape(), &[2, 16, 16, 16]);
    }

    #[test]
    fn later_stages_halve() {
        let mut rng = Rng::new(22);
        let e = PatchEmbedLayer::<f32>::new(&mut rng, "e2", 16, 32, 3, 2, 1, 1e-5);
        let tape = Tape::no_grad();
        let x = Tensor::from_fn(&[1, 16, 16, 16], |_| rng.uniform(0.0, 1.0) as f32);
        let y = e.forward(&tape, &x).unwrap();
        assert_eq!(y.shape(), &[1, 32, 8, 8]);
    }
}
