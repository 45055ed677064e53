//! Global–local feature response: a spatial attention branch that pairs a 1×1
//! local projection with multi-head attention over flattened positions, then
//! concatenates the two halves.
//!
//! The differential variant computes two attention maps from split query/key
//! projections and subtracts them with a learned scalar weight:
//!
//!   A = softmax(Q₁ᵀK₁ / √d) − λ · softmax(Q₂ᵀK₂ / √d)
//!   λ = exp(⟨λq₁, λk₁⟩) − exp(⟨λq₂, λk₂⟩) + λ_base
//!
//! so each row of `A` sums to exactly `1 − λ`. The plain variant keeps a single
//! softmax map and no λ parameters; its rows sum to one.

use crate::error::{Error, Result};
use crate::nn::Conv2dLayer;
use crate::rng::Rng;
use crate::tensor::{Parameter, Scalar, Tape, Tensor};

// ── Variant selection ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    /// Two subtracted softmax maps weighted by the learned scalar λ.
    Differential,
    /// One softmax map, half-width query/key projections, no λ.
    Simple,
}

/// Intermediate attention tensors, exposed for inspection and tests.
pub struct AttentionDetail<T: Scalar> {
    /// First softmax map `[B, heads, HW, HW]` (absent for the plain variant).
    pub first: Option<Tensor<T>>,
    /// Second softmax map (absent for the plain variant).
    pub second: Option<Tensor<T>>,
    /// The map actually applied to the values `[B, heads, HW, HW]`.
    pub composite: Tensor<T>,
    /// Scalar λ `[1]` (absent for the plain variant).
    pub lambda: Option<Tensor<T>>,
}

// ── Module ─────────────────────────────────────────────────────────────────

pub struct GlfrModule<T: Scalar> {
    pub wq: Conv2dLayer<T>,
    pub wk: Conv2dLayer<T>,
    pub wv: Conv2dLayer<T>,
    pub local: Conv2dLayer<T>,
    /// λ dot-product vectors, each `[head_dim]`; present only when differential.
    pub lambda_q1: Option<Parameter<T>>,
    pub lambda_k1: Option<Parameter<T>>,
    pub lambda_q2: Option<Parameter<T>>,
    pub lambda_k2: Option<Parameter<T>>,
    pub kind: AttentionKind,
    pub heads: usize,
    pub head_dim: usize,
    pub lambda_base: f64,
    in_channels: usize,
    attn_channels: usize,
}

impl<T: Scalar> GlfrModule<T> {
    /// `in_channels` is the width of the branch input; the attention and local
    /// paths each produce `in_channels / 2` so the concatenated output width
    /// matches the input.
    pub fn new(
        rng: &mut Rng,
        name: &str,
        in_channels: usize,
        heads: usize,
        lambda_base: f64,
        kind: AttentionKind,
    ) -> Result<Self> {
        if in_channels % 2 != 0 {
            return Err(Error::config(format!(
                "attention branch width {in_channels} must be even"
            )));
        }
        let attn_channels = in_channels / 2;
        if attn_channels % heads != 0 {
            return Err(Error::config(format!(
                "attention width {attn_channels} not divisible by {heads} heads"
            )));
        }
        let head_dim = attn_channels / heads;
        let qk_out = match kind {
            AttentionKind::Differential => in_channels, // split into two halves later
            AttentionKind::Simple => attn_channels,
        };
        let conv1 = |rng: &mut Rng, n: String, co: usize| {
            Conv2dLayer::new(rng, &n, in_channels, co, 1, 1, 0, 1, true)
        };
        let lam = |rng: &mut Rng, n: String| {
            Parameter::new(n, Tensor::from_fn(&[head_dim], |_| T::from_f64(rng.normal_scaled(0.1))))
        };
        let (lq1, lk1, lq2, lk2) = match kind {
            AttentionKind::Differential => (
                Some(lam(rng, format!("{name}.lambda_q1"))),
                Some(lam(rng, format!("{name}.lambda_k1"))),
                Some(lam(rng, format!("{name}.lambda_q2"))),
                Some(lam(rng, format!("{name}.lambda_k2"))),
            ),
            AttentionKind::Simple => (None, None, None, None),
        };
        Ok(GlfrModule {
            wq: conv1(rng, format!("{name}.wq"), qk_out),
            wk: conv1(rng, format!("{name}.wk"), qk_out),
            wv: conv1(rng, format!("{name}.wv"), attn_channels),
            local: conv1(rng, format!("{name}.local"), attn_channels),
            lambda_q1: lq1,
            lambda_k1: lk1,
            lambda_q2: lq2,
            lambda_k2: lk2,
            kind,
            heads,
            head_dim,
            lambda_base,
            in_channels,
            attn_channels,
        })
    }

    /// Current λ as a tracked scalar tensor `[1]`.
    pub fn lambda_value(&self, tape: &Tape<T>) -> Result<Tensor<T>> {
        let dot = |tape: &Tape<T>, a: &Parameter<T>, b: &Parameter<T>| -> Result<Tensor<T>> {
            tape.sum(&tape.mul(a.tensor(), b.tensor())?, &[], false)
        };
        let e1 = tape.exp(&dot(
            tape,
            self.lambda_q1.as_ref().expect("differential"),
            self.lambda_k1.as_ref().expect("differential"),
        )?)?;
        let e2 = tape.exp(&dot(
            tape,
            self.lambda_q2.as_ref().expect("differential"),
            self.lambda_k2.as_ref().expect("differential"),
        )?)?;
        tape.add_const(&tape.sub(&e1, &e2)?, self.lambda_base)
    }

    /// Reshape `[B, heads·head_dim, H, W]` into `[B, heads, head_dim, HW]`.
    fn to_heads(&self, tape: &Tape<T>, t: &Tensor<T>) -> Result<Tensor<T>> {
        let s = t.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        tape.reshape(t, &[b, self.heads, c / self.heads, h * w])
    }

    /// Scaled-dot softmax map from head-major queries and keys `[B, h, d, HW]`.
    fn softmax_map(&self, tape: &Tape<T>, q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
        let qt = tape.permute(q, &[0, 1, 3, 2])?; // [B, h, HW, d]
        let scores = tape.scale(&tape.matmul(&qt, k)?, 1.0 / (self.head_dim as f64).sqrt())?;
        tape.softmax(&scores, 3)
    }

    /// Run attention on `x [B, in, H, W]`, returning the branch output
    /// `[B, in, H, W]` (local half first, attended half second) plus the
    /// intermediate maps.
    pub fn forward_detailed(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, AttentionDetail<T>)> {
        if x.ndim() != 4 || x.shape()[1] != self.in_channels {
            return Err(Error::dim(format!(
                "attention branch over {} channels got {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let q = self.wq.forward(tape, x)?;
        let k = self.wk.forward(tape, x)?;
        let v = self.wv.forward(tape, x)?;
        let l = self.local.forward(tape, x)?;

        let detail = match self.kind {
            AttentionKind::Differential => {
                let qs = tape.split(&q, 1, 2)?;
                let ks = tape.split(&k, 1, 2)?;
                let a1 = self.softmax_map(tape, &self.to_heads(tape, &qs[0])?, &self.to_heads(tape, &ks[0])?)?;
                let a2 = self.softmax_map(tape, &self.to_heads(tape, &qs[1])?, &self.to_heads(tape, &ks[1])?)?;
                let lam = self.lambda_value(tape)?;
                let composite = tape.sub(&a1, &tape.mul(&a2, &lam)?)?;
                AttentionDetail { first: Some(a1), second: Some(a2), composite, lambda: Some(lam) }
            }
            AttentionKind::Simple => {
                let a = self.softmax_map(tape, &self.to_heads(tape, &q)?, &self.to_heads(tape, &k)?)?;
                AttentionDetail { first: None, second: None, composite: a, lambda: None }
            }
        };

        // [B,h,HW,HW] @ [B,h,HW,d] → [B,h,HW,d] → [B,h,d,HW] → [B,C,H,W]
        let vt = tape.permute(&self.to_heads(tape, &v)?, &[0, 1, 3, 2])?;
        let mixed = tape.matmul(&detail.composite, &vt)?;
        let attended = tape.reshape(
            &tape.permute(&mixed, &[0, 1, 3, 2])?,
            &[b, self.attn_channels, h, w],
        )?;
        let out = tape.concat(&[&l, &attended], 1)?;
        Ok((out, detail))
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_detailed(tape, x)?.0)
    }

    pub fn collect_params(&self, out: &mut Vec<Parameter<T>>) {
        self.wq.collect_params(out);
        self.wk.collect_params(out);
        self.wv.collect_params(out);
        self.local.collect_params(out);
        for p in [&self.lambda_q1, &self.lambda_k1, &self.lambda_q2, &self.lambda_k2] {
            if let Some(p) = p {
                out.push(p.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck_default;

    fn module(kind: AttentionKind, seed: u64) -> GlfrModule<f64> {
        let mut rng = Rng::new(seed);
        GlfrModule::new(&mut rng, "glfr", 8, 2, 0.8, kind).unwrap()
    }

    fn input(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn lambda_is_exactly_base_at_zero_vectors() {
        let g = module(AttentionKind::Differential, 3);
        for p in [&g.lambda_q1, &g.lambda_k1, &g.lambda_q2, &g.lambda_k2] {
            let n = p.as_ref().unwrap().tensor().numel();
            p.as_ref().unwrap().set_data(vec![0.0; n]).unwrap();
        }
        let tape = Tape::no_grad();
        let lam = g.lambda_value(&tape).unwrap().item().unwrap();
        assert_eq!(lam, 0.8);
    }

    #[test]
    fn composite_rows_sum_to_one_minus_lambda() {
        let g = module(AttentionKind::Differential, 5);
        let tape = Tape::no_grad();
        let x = input(7, &[2, 8, 3, 3]);
        let (_, d) = g.forward_detailed(&tape, &x).unwrap();
        let lam = d.lambda.unwrap().item().unwrap();
        let a = d.composite;
        let s = a.shape().to_vec(); // [B, h, HW, HW]
        assert_eq!(s, vec![2, 2, 9, 9]);
        let data = a.to_vec();
        for row in 0..2 * 2 * 9 {
            let sum: f64 = data[row * 9..(row + 1) * 9].iter().sum();
            assert!((sum - (1.0 - lam)).abs() < 1e-12, "row {row}: {sum} vs {}", 1.0 - lam);
        }
    }

    #[test]
    fn plain_variant_rows_sum_to_one() {
        let g = module(AttentionKind::Simple, 5);
        let tape = Tape::no_grad();
        let x = input(7, &[1, 8, 3, 3]);
        let (y, d) = g.forward_detailed(&tape, &x).unwrap();
        assert!(d.lambda.is_none() && d.first.is_none());
        assert_eq!(y.shape(), &[1, 8, 3, 3]);
        let data = d.composite.to_vec();
        for row in 0..2 * 9 {
            let sum: f64 = data[row * 9..(row + 1) * 9].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_attention_oracle() {
        // Re-derive the composite map and mixed values with plain loops.
        let g = module(AttentionKind::Differential, 11);
        let tape = Tape::no_grad();
        let (b, c, hh, ww) = (1usize, 8usize, 2usize, 2usize);
        let x = input(13, &[b, c, hh, ww]);
        let (y, d) = g.forward_detailed(&tape, &x).unwrap();

        let q = g.wq.forward(&tape, &x).unwrap().to_vec();
        let k = g.wk.forward(&tape, &x).unwrap().to_vec();
        let v = g.wv.forward(&tape, &x).unwrap().to_vec();
        let l = g.local.forward(&tape, &x).unwrap().to_vec();
        let lam = d.lambda.unwrap().item().unwrap();
        let (heads, hd, hw) = (g.heads, g.head_dim, hh * ww);
        // q layout: [qk_out=8, HW]; halves of 4 channels; head-major groups of hd=2.
        let softmax_at = |proj: &[f64], half: usize, head: usize, i: usize| -> Vec<f64> {
            let base = half * (heads * hd) + head * hd;
            let mut row = vec![0.0f64; hw];
            for j in 0..hw {
                let mut dot = 0.0;
                for dch in 0..hd {
                    dot += proj[(base + dch) * hw + i] * k[(base + dch) * hw + j];
                }
                row[j] = dot / (hd as f64).sqrt();
            }
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut e: Vec<f64> = row.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter_mut().for_each(|t| *t /= z);
            e
        };
        let comp = d.composite.to_vec();
        let mut mixed = vec![0.0f64; heads * hd * hw]; // [h, d, HW] value-mixed
        for head in 0..heads {
            for i in 0..hw {
                let a1 = softmax_at(&q, 0, head, i);
                let a2 = softmax_at(&q, 1, head, i);
                for j in 0..hw {
                    let want = a1[j] - lam * a2[j];
                    let got = comp[(head * hw + i) * hw + j];
                    assert!((got - want).abs() < 1e-12, "map[{head},{i},{j}]");
                    for dch in 0..hd {
                        mixed[(head * hd + dch) * hw + i] += want * v[(head * hd + dch) * hw + j];
                    }
                }
            }
        }
        let out = y.to_vec();
        let attn_c = heads * hd;
        for ch in 0..attn_c {
            for i in 0..hw {
                // output is [local(4ch) | attended(4ch)]
                assert!((out[ch * hw + i] - l[ch * hw + i]).abs() < 1e-12);
                let got = out[(attn_c + ch) * hw + i];
                assert!((got - mixed[ch * hw + i]).abs() < 1e-12, "attended[{ch},{i}]");
            }
        }
    }

    #[test]
    fn single_position_output_is_one_minus_lambda_times_value() {
        // With one spatial position every softmax row is the scalar 1, so the
        // attended half collapses to (1 − λ)·V.
        let g = module(AttentionKind::Differential, 17);
        let tape = Tape::no_grad();
        let x = input(19, &[2, 8, 1, 1]);
        let (y, d) = g.forward_detailed(&tape, &x).unwrap();
        let lam = d.lambda.unwrap().item().unwrap();
        let v = g.wv.forward(&tape, &x).unwrap().to_vec();
        let out = y.to_vec();
        for bi in 0..2 {
            for ch in 0..4 {
                let got = out[bi * 8 + 4 + ch];
                let want = (1.0 - lam) * v[bi * 4 + ch];
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn gradients_verify_differential() {
        let g = module(AttentionKind::Differential, 23);
        let x = Parameter::new("x", input(29, &[1, 8, 2, 2]));
        let mut inputs = vec![x.clone()];
        g.collect_params(&mut inputs);
        let refs: Vec<&Parameter<f64>> = inputs.iter().collect();
        let r = gradcheck_default("glfr", |tape| g.forward(tape, x.tensor()), &refs, 37).unwrap();
        assert!(r.pass(), "{r}");
    }

    #[test]
    fn gradients_verify_plain() {
        let g = module(AttentionKind::Simple, 23);
        let x = Parameter::new("x", input(29, &[1, 8, 2, 2]));
        let mut inputs = vec![x.clone()];
        g.collect_params(&mut inputs);
        let refs: Vec<&Parameter<f64>> = inputs.iter().collect();
        let r = gradcheck_default("glfr_plain", |tape| g.forward(tape, x.tensor()), &refs, 41).unwrap();
        assert!(r.pass(), "{r}");
    }
}
