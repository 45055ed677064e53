//! Channel-mixing MLP implemented with 1×1 convolutions.

use super::Conv2dLayer;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

/// Two pointwise convolutions around a GELU: C → ratio·C → C.
pub struct ConvMLPLayer<T: Scalar> {
    pub expand: Conv2dLayer<T>,
    pub project: Conv2dLayer<T>,
}

impl<T: Scalar> ConvMLPLayer<T> {
    pub fn new(rng: &mut Rng, name: &str, channels: usize, ratio: usize) -> Self {
        let hidden = channels * ratio;
        ConvMLPLayer {
            expand: Conv2dLayer::new(rng, &format!("{name}.expand"), channels, hidden, 1, 1, 0, 1, true),
            project: Conv2dLayer::new(rng, &format!("{name}.project"), hidden, channels, 1, 1, 0, 1, true),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.expand.forward(tape, x)?;
        let h = tape.gelu(&h)?;
        self.project.forward(tape, &h)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.expand.collect_params(out);
        self.project.collect_params(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck_default;

    #[test]
    fn preserves_shape_and_widens_internally() {
        let mut rng = Rng::new(8);
        let mlp = ConvMLPLayer::<f32>::new(&mut rng, "m", 6, 4);
        assert_eq!(mlp.expand.weight.shape(), &[24, 6, 1, 1]);
        assert_eq!(mlp.project.weight.shape(), &[6, 24, 1, 1]);
        let tape = Tape::no_grad();
        let x = Tensor::from_fn(&[2, 6, 3, 3], |_| rng.uniform(-1.0, 1.0) as f32);
        let y = mlp.forward(&tape, &x).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn zeroed_projection_silences_the_branch() {
        let mut rng = Rng::new(8);
        let mlp = ConvMLPLayer::<f32>::new(&mut rng, "m", 4, 2);
        mlp.project.weight.set_data(vec![0.0; mlp.project.weight.numel()]).unwrap();
        let tape = Tape::no_grad();
        let x = Tensor::from_fn(&[1, 4, 2, 2], |_| rng.uniform(-1.0, 1.0) as f32);
        let y = mlp.forward(&tape, &x).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_verify() {
        let mut rng = Rng::new(44);
        let mlp = ConvMLPLayer::<f64>::new(&mut rng, "m", 3, 2);
        let x = Parameter::new("x", Tensor::from_fn(&[1, 3, 2, 2], |_| rng.uniform(-1.0, 1.0)));
        let mut inputs = vec![x.clone()];
        mlp.collect_params(&mut inputs);
        let refs: Vec<&Parameter<f64>> = inputs.iter().collect();
        let r = gradcheck_default("conv_mlp", |tape| mlp.forward(tape, x.tensor()), &refs, 29).unwrap();
        assert!(r.pass(), "{r}");
    }
}
