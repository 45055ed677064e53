//! Bitemporal feature fusion. For each encoder stage the two streams are
//! concatenated with their difference and reduced back to the stage width:
//!
//!   fused = GELU( Conv1×1( concat(pre, post, post − pre) ) )
//!
//! The explicit difference block gives the decoder a direct change signal
//! while the raw blocks preserve the semantic content of both dates.

use crate::error::{Error, Result};
use crate::nn::Conv2dLayer;
use crate::rng::Rng;
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

pub struct DaModule<T: Scalar> {
    pub proj: Conv2dLayer<T>,
    channels: usize,
}

impl<T: Scalar> DaModule<T> {
    pub fn new(rng: &mut Rng, name: &str, channels: usize) -> Self {
        DaModule {
            proj: Conv2dLayer::new(rng, &format!("{name}.proj"), 3 * channels, channels, 1, 1, 0, 1, true),
            channels,
        }
    }

    fn concat_streams(&self, tape: &Tape<T>, pre: &Tensor<T>, post: &Tensor<T>) -> Result<Tensor<T>> {
        if pre.shape() != post.shape() {
            return Err(Error::dim(format!(
                "stream shapes differ: {:?} vs {:?}",
                pre.shape(),
                post.shape()
            )));
        }
        if pre.ndim() != 4 || pre.shape()[1] != self.channels {
            return Err(Error::dim(format!(
                "fusion over {} channels got {:?}",
                self.channels,
                pre.shape()
            )));
        }
        let diff = tape.sub(post, pre)?;
        tape.concat(&[pre, post, &diff], 1)
    }

    /// Pre-activation tap: the 1×1 projection output before the GELU.
    pub fn pre_activation(&self, tape: &Tape<T>, pre: &Tensor<T>, post: &Tensor<T>) -> Result<Tensor<T>> {
        let cat = self.concat_streams(tape, pre, post)?;
        self.proj.forward(tape, &cat)
    }

    pub fn forward(&self, tape: &Tape<T>, pre: &Tensor<T>, post: &Tensor<T>) -> Result<Tensor<T>> {
        let z = self.pre_activation(tape, pre, post)?;
        tape.gelu(&z)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.proj.collect_params(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck_default;

    fn rand(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn reduces_three_blocks_to_stage_width() {
        let mut rng = Rng::new(3);
        let m = DaModule::<f64>::new(&mut rng, "da", 6);
        let tape = Tape::no_grad();
        let pre = rand(5, &[2, 6, 4, 4]);
        let post = rand(7, &[2, 6, 4, 4]);
        let y = m.forward(&tape, &pre, &post).unwrap();
        assert_eq!(y.shape(), &[2, 6, 4, 4]);
    }

    #[test]
    fn identical_streams_zero_the_difference_block() {
        let mut rng = Rng::new(9);
        let m = DaModule::<f64>::new(&mut rng, "da", 4);
        let tape = Tape::no_grad();
        let x = rand(11, &[1, 4, 3, 3]);
        let cat = m.concat_streams(&tape, &x, &x).unwrap();
        let v = cat.to_vec();
        let block = 4 * 9;
        assert_eq!(&v[..block], &x.to_vec()[..]);
        assert_eq!(&v[block..2 * block], &x.to_vec()[..]);
        assert!(v[2 * block..].iter().all(|&d| d == 0.0));
    }

    #[test]
    fn matches_scalar_oracle() {
        // Loop evaluation of concat → 1×1 conv → gelu on a small pair.
        let mut rng = Rng::new(13);
        let c = 2usize;
        let m = DaModule::<f64>::new(&mut rng, "da", c);
        let tape = Tape::no_grad();
        let pre = rand(15, &[1, c, 2, 2]);
        let post = rand(17, &[1, c, 2, 2]);
        let y = m.forward(&tape, &pre, &post).unwrap().to_vec();
        let w = m.proj.weight.tensor().to_vec(); // [c, 3c, 1, 1]
        let b = m.proj.bias.as_ref().unwrap().tensor().to_vec();
        let (pv, qv) = (pre.to_vec(), post.to_vec());
        let gelu = |x: f64| {
            0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
        };
        for oc in 0..c {
            for pix in 0..4 {
                let mut acc = b[oc];
                for ic in 0..3 * c {
                    let xin = match ic / c {
                        0 => pv[(ic % c) * 4 + pix],
                        1 => qv[(ic % c) * 4 + pix],
                        _ => qv[(ic % c) * 4 + pix] - pv[(ic % c) * 4 + pix],
                    };
                    acc += w[oc * 3 * c + ic] * xin;
                }
                let want = gelu(acc);
                let got = y[oc * 4 + pix];
                assert!((got - want).abs() < 1e-12, "[{oc},{pix}] {got} vs {want}");
            }
        }
    }

    #[test]
    fn difference_reader_is_antisymmetric_before_activation() {
        // Zero the weights over the first two blocks so the projection reads
        // only the difference; swapping the streams must negate the tap.
        let mut rng = Rng::new(19);
        let c = 3usize;
        let m = DaModule::<f64>::new(&mut rng, "da", c);
        let mut w = m.proj.weight.tensor().to_vec();
        for oc in 0..c {
            for ic in 0..2 * c {
                w[oc * 3 * c + ic] = 0.0;
            }
        }
        m.proj.weight.set_data(w).unwrap();
        m.proj.bias.as_ref().unwrap().set_data(vec![0.0; c]).unwrap();
        let tape = Tape::no_grad();
        let pre = rand(21, &[1, c, 2, 2]);
        let post = rand(23, &[1, c, 2, 2]);
        let fwd = m.pre_activation(&tape, &pre, &post).unwrap().to_vec();
        let rev = m.pre_activation(&tape, &post, &pre).unwrap().to_vec();
        for (a, b) in fwd.iter().zip(&rev) {
            assert!((a + b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_mismatched_streams() {
        let mut rng = Rng::new(25);
        let m = DaModule::<f64>::new(&mut rng, "da", 4);
        let tape = Tape::no_grad();
        let a = Tensor::zeros(&[1, 4, 4, 4]);
        let b = Tensor::zeros(&[1, 4, 2, 2]);
        assert!(m.forward(&tape, &a, &b).is_err());
    }

    #[test]
    fn gradients_verify() {
        let mut rng = Rng::new(27);
        let m = DaModule::<f64>::new(&mut rng, "da", 2);
        let pre = Parameter::new("pre", rand(29, &[1, 2, 2, 2]));
        let post = Parameter::new("post", rand(31, &[1, 2, 2, 2]));
        let mut inputs = vec![pre.clone(), post.clone()];
        m.collect_params(&mut inputs);
        let refs: Vec<&Parameter<f64>> = inputs.iter().collect();
        let r = gradcheck_default(
            "fusion",
            |tape| m.forward(tape, pre.tensor(), post.tensor()),
            &refs,
            47,
        )
        .unwrap();
        assert!(r.pass(), "{r}");
    }
}
