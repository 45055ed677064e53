//! Full change-detection model: configuration, deterministic construction,
//! the Siamese forward pass, and structural introspection (parameter listing,
//! grouping, and counting).

use crate::decoder::DecoderModule;
pub use crate::decoder::predict;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::fusion::DaModule;
use crate::glfr::AttentionKind;
use crate::rng::Rng;
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

// ── Configuration ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub heads: usize,
    pub lambda_init: f64,
    pub eps: f64,
    pub mlp_ratio: usize,
    pub decoder_width: usize,
    pub num_classes: usize,
    pub attention: AttentionKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Full-size preset: four stages of depth 3/3/4/3 at widths 64/96/128/256.
    fn default() -> Self {
        ModelConfig {
            stage_channels: [64, 96, 128, 256],
            stage_depths: [3, 3, 4, 3],
            heads: 4,
            lambda_init: 0.8,
            eps: 1e-5,
            mlp_ratio: 4,
            decoder_width: 384,
            num_classes: 2,
            attention: AttentionKind::Differential,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Desk-scale preset: single-block stages at widths 16/32/48/64, narrow
    /// decoder. Small enough to train in minutes on one CPU core and to
    /// finite-difference check in full 64-bit precision.
    pub fn tiny() -> Self {
        ModelConfig {
            stage_channels: [16, 32, 48, 64],
            stage_depths: [1, 1, 1, 1],
            decoder_width: 32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (i, &c) in self.stage_channels.iter().enumerate() {
            if c % 16 != 0 {
                problems.push(format!(
                    "stage {} channels {} not divisible by 16 (head arithmetic)",
                    i + 1,
                    c
                ));
            }
            if let Err(e) = head_dim(c, self.heads) {
                problems.push(e.to_string());
            }
        }
        if self.num_classes != 2 {
            problems.push(format!("num_classes must be 2, got {}", self.num_classes));
        }
        if self.stage_depths.iter().any(|&d| d == 0) {
            problems.push("every stage needs at least one block".to_string());
        }
        if self.heads == 0 {
            problems.push("heads must be positive".to_string());
        }
        if self.mlp_ratio == 0 || self.decoder_width == 0 {
            problems.push("mlp_ratio and decoder_width must be positive".to_string());
        }
        if !(self.eps > 0.0) {
            problems.push("eps must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}

/// Per-head attention width for a stage of `channels`: the attention branch
/// runs at a quarter of the stage width, split across `heads`.
pub fn head_dim(channels: usize, heads: usize) -> Result<usize> {
    if channels == 0 || heads == 0 {
        return Err(Error::config("channels and heads must be positive".to_string()));
    }
    let d = channels / (4 * heads);
    if d == 0 {
        return Err(Error::config(format!(
            "stage channels {channels} too small for {heads} heads (needs at least {})",
            4 * heads
        )));
    }
    Ok(d)
}

// ── Model ──────────────────────────────────────────────────────────────────

pub struct GradFormer<T: Scalar> {
    pub encoder: Encoder<T>,
    pub fusers: Vec<DaModule<T>>,
    pub decoder: DecoderModule<T>,
    pub config: ModelConfig,
}

impl<T: Scalar> GradFormer<T> {
    /// Build with all weights drawn from `config.seed`; two builds with the
    /// same config are bitwise identical. Draw order is fixed: encoder stages
    /// in order (embed, then blocks), the four fusion projections, then the
    /// decoder.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let encoder = Encoder::new(
            &mut rng,
            "enc",
            3,
            &config.stage_channels,
            &config.stage_depths,
            config.heads,
            config.lambda_init,
            config.eps,
            config.mlp_ratio,
            config.attention,
        )?;
        let fusers = (0..4)
            .map(|i| DaModule::new(&mut rng, &format!("fuse.stage{}", i + 1), config.stage_channels[i]))
            .collect();
        let decoder = DecoderModule::new(
            &mut rng,
            "dec",
            &config.stage_channels,
            config.decoder_width,
            config.num_classes,
        );
        Ok(GradFormer { encoder, fusers, decoder, config })
    }

    fn check_pair(&self, pre: &Tensor<T>, post: &Tensor<T>) -> Result<()> {
        if pre.shape() != post.shape() {
            return Err(Error::dim(format!(
                "image pair shapes differ: {:?} vs {:?}",
                pre.shape(),
                post.shape()
            )));
        }
        let s = pre.shape();
        if pre.ndim() != 4 || s[1] != 3 {
            return Err(Error::dim(format!("expected [B,3,H,W] images, got {s:?}")));
        }
        if s[2] % 32 != 0 || s[3] % 32 != 0 {
            return Err(Error::dim(format!(
                "spatial dims must be divisible by 32, got {}x{}",
                s[2], s[3]
            )));
        }
        Ok(())
    }

    /// Two-class logits `[B, 2, H, W]` for a bitemporal pair. Both images run
    /// through the same encoder weights; each stage pair is fused with its
    /// difference and the decoder restores full resolution.
    pub fn forward(&self, tape: &Tape<T>, pre: &Tensor<T>, post: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_pair(pre, post)?;
        let feats_pre = self.encoder.encode(tape, pre)?;
        let feats_post = self.encoder.encode(tape, post)?;
        let mut fused = Vec::with_capacity(4);
        for (i, f) in self.fusers.iter().enumerate() {
            fused.push(f.forward(tape, &feats_pre[i], &feats_post[i])?);
        }
        self.decoder.forward(tape, &fused)
    }

    /// All trainable parameters in construction order (stable across runs).
    pub fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        self.encoder.collect_params(&mut out);
        for f in &self.fusers {
            f.collect_params(&mut out);
        }
        self.decoder.collect_params(&mut out);
        out
    }

    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    /// Total trainable scalar count plus a per-group breakdown keyed by name
    /// prefix (encoder stages, fusion, decoder).
    pub fn count_parameters(&self) -> (usize, Vec<(String, usize)>) {
        let groups = ["enc.stage1", "enc.stage2", "enc.stage3", "enc.stage4", "fuse", "dec"];
        let mut counts = vec![0usize; groups.len()];
        let mut total = 0usize;
        for p in self.parameters() {
            let n = p.numel();
            total += n;
            let g = groups
                .iter()
                .position(|g| p.name().starts_with(g))
                .expect("parameter outside the known groups");
            counts[g] += n;
        }
        (total, groups.iter().map(|s| s.to_string()).zip(counts).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_dim_matches_quarter_width_split() {
        assert_eq!(head_dim(64, 4).unwrap(), 4);
        assert_eq!(head_dim(16, 4).unwrap(), 1);
        assert!(head_dim(8, 4).is_err()); // quarter width under head count
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = ModelConfig::tiny();
        cfg.stage_channels[1] = 24;
        let err = match GradFormer::<f32>::build(cfg) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("expected rejection"),
        };
        assert!(err.contains("24"), "{err}");

        let mut cfg = ModelConfig::tiny();
        cfg.num_classes = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let a = GradFormer::<f32>::build(ModelConfig::tiny()).unwrap();
        let b = GradFormer::<f32>::build(ModelConfig::tiny()).unwrap();
        let pa = a.parameters();
        let pb = b.parameters();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.name(), y.name());
            assert_eq!(x.tensor().to_vec(), y.tensor().to_vec(), "{}", x.name());
        }
        let mut cfg = ModelConfig::tiny();
        cfg.seed = 7;
        let c = GradFormer::<f32>::build(cfg).unwrap();
        let pc = c.parameters();
        let same = pa
            .iter()
            .zip(&pc)
            .all(|(x, y)| x.tensor().to_vec() == y.tensor().to_vec());
        assert!(!same, "different seeds should differ somewhere");
    }

    #[test]
    fn tiny_forward_shape() {
        let m = GradFormer::<f32>::build(ModelConfig::tiny()).unwrap();
        let tape = Tape::no_grad();
        let mut rng = Rng::new(3);
        let pre = Tensor::from_fn(&[1, 3, 32, 32], |_| rng.uniform(0.0, 1.0) as f32);
        let post = Tensor::from_fn(&[1, 3, 32, 32], |_| rng.uniform(0.0, 1.0) as f32);
        let logits = m.forward(&tape, &pre, &post).unwrap();
        assert_eq!(logits.shape(), &[1, 2, 32, 32]);

        // identical pair is a valid input, no structural claim on the output
        let logits = m.forward(&tape, &pre, &pre).unwrap();
        assert!(logits.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_pairs() {
        let m = GradFormer::<f32>::build(ModelConfig::tiny()).unwrap();
        let tape = Tape::no_grad();
        let a = Tensor::zeros(&[1, 3, 32, 32]);
        assert!(m.forward(&tape, &a, &Tensor::zeros(&[1, 3, 64, 64])).is_err());
        assert!(m.forward(&tape, &Tensor::zeros(&[1, 1, 32, 32]), &Tensor::zeros(&[1, 1, 32, 32])).is_err());
        assert!(m.forward(&tape, &Tensor::zeros(&[1, 3, 48, 48]), &Tensor::zeros(&[1, 3, 48, 48])).is_err());
    }

    #[test]
    fn count_breakdown_sums_to_total_and_grows_with_width() {
        let tiny = GradFormer::<f32>::build(ModelConfig::tiny()).unwrap();
        let (total, groups) = tiny.count_parameters();
        assert_eq!(total, groups.iter().map(|(_, n)| n).sum::<usize>());
        assert!(groups.iter().all(|(_, n)| *n > 0));

        let mut wider = ModelConfig::tiny();
        wider.stage_channels = [32, 64, 96, 128];
        let w = GradFormer::<f32>::build(wider).unwrap();
        assert!(w.count_parameters().0 > total);
    }

    #[test]
    fn tiny_count_matches_layer_formula_sum() {
        // Independent closed-form count from the layer shapes.
        let cfg = ModelConfig::tiny();
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let norm = |c: usize| 2 * c;
        let mut want = 0usize;
        let mut cin = 3usize;
        for (si, &c) in cfg.stage_channels.iter().enumerate() {
            let k = if si == 0 { 7 } else { 3 };
            want += conv(cin, c, k) + norm(c); // patch embed
            let cs = c / 2; // branch width
            let c4 = c / 4; // attention/local width
            let hd = c / (4 * cfg.heads);
            for _ in 0..cfg.stage_depths[si] {
                want += norm(c); // norm1
                want += conv(cs, cs, 1) * 2; // wq, wk (differential: full width)
                want += conv(cs, c4, 1) * 2; // wv, local
                want += 4 * hd; // lambda vectors
                want += 3 * cs; // gate parameters
                want += norm(c); // norm2
                want += conv(c, cfg.mlp_ratio * c, 1) + conv(cfg.mlp_ratio * c, c, 1);
            }
            cin = c;
        }
        for &c in &cfg.stage_channels {
            want += conv(3 * c, c, 1); // fusion
        }
        let d = cfg.decoder_width;
        let total_c: usize = cfg.stage_channels.iter().sum();
        want += conv(total_c, d, 1); // fuse_proj
        want += 2 * (conv(d, d, 2) + 2 * conv(d, d, 3)); // (up + residual) twice
        want += conv(d, 2, 3); // head
        let m = GradFormer::<f32>::build(cfg).unwrap();
        assert_eq!(m.count_parameters().0, want);
    }

    #[test]
    fn plain_attention_count_difference_is_structural() {
        // Swapping to the single-softmax variant halves the query/key
        // projections and drops the four λ vectors; nothing else moves.
        let diff = GradFormer::<f32>::build(ModelConfig::tiny()).unwrap();
        let mut cfg = ModelConfig::tiny();
        cfg.attention = AttentionKind::Simple;
        let simple = GradFormer::<f32>::build(cfg).unwrap();
        let (nd, _) = diff.count_parameters();
        let (ns, _) = simple.count_parameters();
        let mut want_gap = 0usize;
        for (si, &c) in ModelConfig::tiny().stage_channels.iter().enumerate() {
            let cs = c / 2;
            let c4 = c / 4;
            let hd = c / 16;
            let per_block = 2 * (cs * cs - cs * c4) + 2 * (cs - c4) + 4 * hd;
            want_gap += per_block * ModelConfig::tiny().stage_depths[si];
        }
        assert!(ns < nd);
        assert_eq!(nd - ns, want_gap);
    }

    #[test]
    fn parameter_namespace_is_complete_for_tiny() {
        // Rebuild the expected name set structurally and require an exact
        // match: every learnable symbol appears exactly once, nothing extra.
        let cfg = ModelConfig::tiny();
        let m = GradFormer::<f32>::build(cfg.clone()).unwrap();
        let mut got: Vec<String> = m.parameters().iter().map(|p| p.name().to_string()).collect();
        let mut want: Vec<String> = Vec::new();
        let wb = |base: String, out: &mut Vec<String>| {
            out.push(format!("{base}.weight"));
            out.push(format!("{base}.bias"));
        };
        for (si, _) in cfg.stage_channels.iter().enumerate() {
            let st = format!("enc.stage{}", si + 1);
            wb(format!("{st}.embed.conv"), &mut want);
            want.push(format!("{st}.embed.norm.gain"));
            want.push(format!("{st}.embed.norm.shift"));
            for bi in 0..cfg.stage_depths[si] {
                let b = format!("{st}.block{bi}");
                want.push(format!("{b}.norm1.gain"));
                want.push(format!("{b}.norm1.shift"));
                for proj in ["wq", "wk", "wv", "local"] {
                    wb(format!("{b}.afrar.glfr.{proj}"), &mut want);
                }
                for lam in ["lambda_q1", "lambda_k1", "lambda_q2", "lambda_k2"] {
                    want.push(format!("{b}.afrar.glfr.{lam}"));
                }
                for gate in ["alpha", "gamma", "beta"] {
                    want.push(format!("{b}.afrar.sea.{gate}"));
                }
                want.push(format!("{b}.norm2.gain"));
                want.push(format!("{b}.norm2.shift"));
                wb(format!("{b}.mlp.expand"), &mut want);
                wb(format!("{b}.mlp.project"), &mut want);
            }
        }
        for i in 1..=4 {
            wb(format!("fuse.stage{i}.proj"), &mut want);
        }
        for part in ["fuse_proj", "up1", "res1.conv1", "res1.conv2", "up2", "res2.conv1", "res2.conv2", "head"] {
            wb(format!("dec.{part}"), &mut want);
        }
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }
}
