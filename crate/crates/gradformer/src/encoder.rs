//! Four-stage hierarchical encoder. Each stage downsamples with a strided
//! patch-embedding convolution and then applies pre-norm residual blocks whose
//! token mixer splits channels between a spatial-attention branch and a
//! channel-gating branch.
//!
//! The same encoder instance is applied to both images of a bitemporal pair,
//! so the two towers share every weight by construction.

use crate::error::{Error, Result};
use crate::glfr::{AttentionKind, GlfrModule};
use crate::nn::{ConvMLPLayer, InstanceNorm2dLayer, PatchEmbedLayer};
use crate::rng::Rng;
use crate::sea::SeaModule;
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

// ── Token mixer: split → (attention | gate) → concat ───────────────────────

/// Channel-split mixer: the first half of the channels goes through the
/// attention branch, the second half through the channel gate, and the two
/// halves are concatenated back in that order.
pub struct AfrarModule<T: Scalar> {
    pub glfr: GlfrModule<T>,
    pub sea: SeaModule<T>,
    channels: usize,
}

impl<T: Scalar> AfrarModule<T> {
    pub fn new(
        rng: &mut Rng,
        name: &str,
        channels: usize,
        heads: usize,
        lambda_base: f64,
        eps: f64,
        kind: AttentionKind,
    ) -> Result<Self> {
        if channels % 2 != 0 {
            return Err(Error::config(format!("mixer width {channels} must be even")));
        }
        let half = channels / 2;
        Ok(AfrarModule {
            glfr: GlfrModule::new(rng, &format!("{name}.glfr"), half, heads, lambda_base, kind)?,
            sea: SeaModule::new(&format!("{name}.sea"), half, eps),
            channels,
        })
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.ndim() != 4 || x.shape()[1] != self.channels {
            return Err(Error::dim(format!(
                "mixer over {} channels got {:?}",
                self.channels,
                x.shape()
            )));
        }
        let halves = tape.split(x, 1, 2)?;
        let a = self.glfr.forward(tape, &halves[0])?;
        let g = self.sea.forward(tape, &halves[1])?;
        tape.concat(&[&a, &g], 1)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.glfr.collect_params(out);
        self.sea.collect_params(out);
    }
}

// ── Residual block ─────────────────────────────────────────────────────────

/// Pre-norm transformer-style block:
/// `y = x + mixer(norm1(x)); out = y + mlp(norm2(y))`.
pub struct EncoderBlock<T: Scalar> {
    pub norm1: InstanceNorm2dLayer<T>,
    pub afrar: AfrarModule<T>,
    pub norm2: InstanceNorm2dLayer<T>,
    pub mlp: ConvMLPLayer<T>,
}

impl<T: Scalar> EncoderBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut Rng,
        name: &str,
        channels: usize,
        heads: usize,
        lambda_base: f64,
        eps: f64,
        mlp_ratio: usize,
        kind: AttentionKind,
    ) -> Result<Self> {
        Ok(EncoderBlock {
            norm1: InstanceNorm2dLayer::new(&format!("{name}.norm1"), channels, eps),
            afrar: AfrarModule::new(rng, &format!("{name}.afrar"), channels, heads, lambda_base, eps, kind)?,
            norm2: InstanceNorm2dLayer::new(&format!("{name}.norm2"), channels, eps),
            mlp: ConvMLPLayer::new(rng, &format!("{name}.mlp"), channels, mlp_ratio),
        })
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mixed = self.afrar.forward(tape, &self.norm1.forward(tape, x)?)?;
        let y = tape.add(x, &mixed)?;
        let expanded = self.mlp.forward(tape, &self.norm2.forward(tape, &y)?)?;
        tape.add(&y, &expanded)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.norm1.collect_params(out);
        self.afrar.collect_params(out);
        self.norm2.collect_params(out);
        self.mlp.collect_params(out);
    }
}

// ── Stage and full encoder ─────────────────────────────────────────────────

pub struct EncoderStage<T: Scalar> {
    pub embed: PatchEmbedLayer<T>,
    pub blocks: Vec<EncoderBlock<T>>,
}

impl<T: Scalar> EncoderStage<T> {
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.embed.forward(tape, x)?;
        for b in &self.blocks {
            h = b.forward(tape, &h)?;
        }
        Ok(h)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.embed.collect_params(out);
        for b in &self.blocks {
            b.collect_params(out);
        }
    }
}

/// Strides relative to the input: stage 1 → 1/4, then 1/8, 1/16, 1/32.
pub struct Encoder<T: Scalar> {
    pub stages: Vec<EncoderStage<T>>,
}

impl<T: Scalar> Encoder<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut Rng,
        name: &str,
        in_channels: usize,
        stage_channels: &[usize; 4],
        stage_depths: &[usize; 4],
        heads: usize,
        lambda_base: f64,
        eps: f64,
        mlp_ratio: usize,
        kind: AttentionKind,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(4);
        let mut cin = in_channels;
        for (si, (&cout, &depth)) in stage_channels.iter().zip(stage_depths).enumerate() {
            let stage_name = format!("{name}.stage{}", si + 1);
            // First stage embeds 7×7/stride-4 patches; later stages halve with 3×3/stride-2.
            let (k, s, p) = if si == 0 { (7, 4, 3) } else { (3, 2, 1) };
            let embed = PatchEmbedLayer::new(rng, &format!("{stage_name}.embed"), cin, cout, k, s, p, eps);
            let mut blocks = Vec::with_capacity(depth);
            for bi in 0..depth {
                blocks.push(EncoderBlock::new(
                    rng,
                    &format!("{stage_name}.block{bi}"),
                    cout,
                    heads,
                    lambda_base,
                    eps,
                    mlp_ratio,
                    kind,
                )?);
            }
            stages.push(EncoderStage { embed, blocks });
            cin = cout;
        }
        Ok(Encoder { stages })
    }

    /// Run all four stages, returning the per-stage feature maps
    /// (finest to coarsest).
    pub fn encode(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for stage in &self.stages {
            h = stage.forward(tape, &h)?;
            feats.push(h.clone());
        }
        Ok(feats)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        for s in &self.stages {
            s.collect_params(out);
        }
    }
}
