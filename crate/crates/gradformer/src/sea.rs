//! Squeeze-enhanced axial gate: a channel-attention branch that rescales each
//! channel by a bounded gate computed from its global spatial energy.
//!
//! For input `x [B, C, H, W]`:
//!   energy      E[b,c] = α[c] · √(Σ_{h,w} x² + ε)
//!   norm factor N[b,c] = γ[c] / √(mean_c E² + ε)
//!   gate        G[b,c] = 1 + tanh(E·N + β[c])              — strictly in (0, 2)
//!   output      y = x ⊙ G (gate broadcast over space)
//!
//! At init (α = 1, γ = 0, β = 0) the norm factor is exactly zero, the gate is
//! exactly one, and the module is a bitwise identity.

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

pub struct SeaModule<T: Scalar> {
    pub alpha: Parameter<T>,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub eps: f64,
    channels: usize,
}

impl<T: Scalar> SeaModule<T> {
    pub fn new(name: &str, channels: usize, eps: f64) -> Self {
        SeaModule {
            alpha: Parameter::new(format!("{name}.alpha"), Tensor::full(&[channels], T::one())),
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::zeros(&[channels])),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            eps,
            channels,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.ndim() != 4 || x.shape()[1] != self.channels {
            return Err(Error::dim(format!(
                "SEA over {} channels got input {:?}",
                self.channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Scaled global spatial energy per (batch, channel): `[B, C]`.
    pub fn energy(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let sq = tape.mul(x, x)?;
        let s = tape.sum(&sq, &[2, 3], false)?;
        let root = tape.sqrt(&tape.add_const(&s, self.eps)?)?;
        tape.mul(&root, self.alpha.tensor())
    }

    /// Cross-channel normalization factor from the energies: `[B, C]`.
    pub fn norm_factor(&self, tape: &Tape<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
        let e2 = tape.mul(e, e)?;
        let m = tape.mean(&e2, &[1], true)?; // [B, 1]
        let rms = tape.sqrt(&tape.add_const(&m, self.eps)?)?;
        tape.div(self.gamma.tensor(), &rms) // [C] / [B,1] → [B, C]
    }

    /// Bounded channel gate `1 + tanh(E·N + β)`: `[B, C]`, values in (0, 2).
    pub fn gate(&self, tape: &Tape<T>, e: &Tensor<T>, n: &Tensor<T>) -> Result<Tensor<T>> {
        let en = tape.add(&tape.mul(e, n)?, self.beta.tensor())?;
        tape.add_const(&tape.tanh(&en)?, 1.0)
    }

    /// Full gated output, same shape as `x`.
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let e = self.energy(tape, x)?;
        let n = self.norm_factor(tape, &e)?;
        let g = self.gate(tape, &e, &n)?;
        let b = x.shape()[0];
        let g4 = tape.reshape(&g, &[b, self.channels, 1, 1])?;
        tape.mul(x, &g4)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        out.push(self.alpha.clone());
        out.push(self.gamma.clone());
        out.push(self.beta.clone());
    }
}
