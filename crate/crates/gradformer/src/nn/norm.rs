//! Instance normalization over spatial dimensions.

use super::{ones_param, zeros_param};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

/// Per-sample, per-channel normalization: subtract the spatial mean, divide by
/// √(biased spatial variance + ε), then apply a learned channel-wise affine.
/// Init is identity-preserving stats (gain 1, shift 0).
pub struct InstanceNorm2dLayer<T: Scalar> {
    pub gain: Parameter<T>,
    pub shift: Parameter<T>,
    pub eps: f64,
    channels: usize,
}

impl<T: Scalar> InstanceNorm2dLayer<T> {
    pub fn new(name: &str, channels: usize, eps: f64) -> Self {
        InstanceNorm2dLayer {
            gain: ones_param(format!("{name}.gain"), &[channels]),
            shift: zeros_param(format!("{name}.shift"), &[channels]),
            eps,
            channels,
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.ndim() != 4 || x.shape()[1] != self.channels {
            return Err(Error::dim(format!(
                "instance norm over {} channels got input {:?}",
                self.channels,
                x.shape()
            )));
        }
        let m = tape.mean(x, &[2, 3], true)?;
        let centered = tape.sub(x, &m)?;
        let var = tape.mean(&tape.mul(&centered, &centered)?, &[2, 3], true)?;
        let denom = tape.sqrt(&tape.add_const(&var, self.eps)?)?;
        let normed = tape.div(&centered, &denom)?;
        // [C] → [C,1,1] so the affine broadcasts over batch and space.
        let g = tape.reshape(self.gain.tensor(), &[self.channels, 1, 1])?;
        let s = tape.reshape(self.shift.tensor(), &[self.channels, 1, 1])?;
        tape.add(&tape.mul(&normed, &g)?, &s)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        out.push(self.gain.clone());
        out.push(self.shift.clone());
    }
}
