//! Pixel-wise segmentation losses over two-class logits: cross-entropy (the
//! default), focal, and soft-IoU (the loss-ablation alternatives). All are
//! differentiable scalars built from tape primitives.
//!
//! Shapes: logits `[B, 2, H, W]`, target `[B, H, W]` with exact 0/1 values.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Focal,
    Miou,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "focal" => Ok(LossKind::Focal),
            "miou" => Ok(LossKind::Miou),
            other => Err(Error::config(format!(
                "unknown loss {other:?} (expected cross_entropy, focal, or miou)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Focal => "focal",
            LossKind::Miou => "miou",
        }
    }

    pub fn evaluate<T: Scalar>(
        &self,
        tape: &Tape<T>,
        logits: &Tensor<T>,
        target: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        match self {
            LossKind::CrossEntropy => cross_entropy_loss(tape, logits, target),
            LossKind::Focal => focal_loss(tape, logits, target, 2.0, 0.25),
            LossKind::Miou => miou_loss(tape, logits, target),
        }
    }
}

// ── Shared plumbing ────────────────────────────────────────────────────────

fn check_shapes<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let ls = logits.shape();
    let ts = target.shape();
    if logits.ndim() != 4 || ls[1] != 2 {
        return Err(Error::dim(format!("expected [B,2,H,W] logits, got {ls:?}")));
    }
    if target.ndim() != 3 || ts[0] != ls[0] || ts[1] != ls[2] || ts[2] != ls[3] {
        return Err(Error::dim(format!("target {ts:?} does not match logits {ls:?}")));
    }
    Ok((ls[0], ls[2], ls[3]))
}

/// Validate 0/1 target values and expand to channel-last one-hot `[B,H,W,2]`.
fn one_hot<T: Scalar>(target: &Tensor<T>) -> Result<Tensor<T>> {
    let data = target.data();
    let mut y = vec![T::zero(); data.len() * 2];
    for (i, &t) in data.iter().enumerate() {
        if t == T::zero() {
            y[2 * i] = T::one();
        } else if t == T::one() {
            y[2 * i + 1] = T::one();
        } else {
            return Err(Error::contract(format!("target value {} is not 0/1", t.to_f64())));
        }
    }
    drop(data);
    let s = target.shape();
    Tensor::from_vec(y, &[s[0], s[1], s[2], 2])
}

/// Channel-last log-softmax `[B,H,W,2]` computed stably: the per-pixel max is
/// subtracted as a detached constant, which shifts neither the value nor the
/// gradient (log-softmax is shift invariant).
fn log_softmax_channel_last<T: Scalar>(tape: &Tape<T>, logits: &Tensor<T>) -> Result<Tensor<T>> {
    let x = tape.permute(logits, &[0, 2, 3, 1])?; // [B,H,W,2]
    let xs = x.shape().to_vec();
    let m = {
        let d = x.data();
        let mut m = Vec::with_capacity(d.len() / 2);
        for px in d.chunks_exact(2) {
            m.push(if px[0] > px[1] { px[0] } else { px[1] });
        }
        drop(d);
        Tensor::from_vec(m, &[xs[0], xs[1], xs[2], 1])?
    };
    let s = tape.sub(&x, &m)?;
    let z = tape.sum(&tape.exp(&s)?, &[3], true)?;
    tape.sub(&s, &tape.ln(&z)?)
}

// ── Losses ─────────────────────────────────────────────────────────────────

/// Mean over all pixels of −log p(target class) under a 2-way softmax.
pub fn cross_entropy_loss<T: Scalar>(
    tape: &Tape<T>,
    logits: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, h, w) = check_shapes(logits, target)?;
    let y = one_hot(target)?;
    let logp = log_softmax_channel_last(tape, logits)?;
    let picked = tape.mul(&logp, &y)?;
    let total = tape.sum(&picked, &[], false)?;
    tape.scale(&total, -1.0 / (b * h * w) as f64)
}

/// Mean over pixels of −α_t (1 − p_t)^γ log p_t, the hard-example-weighted
/// cross-entropy. `alpha` weights the change class; `1 − alpha` the rest.
pub fn focal_loss<T: Scalar>(
    tape: &Tape<T>,
    logits: &Tensor<T>,
    target: &Tensor<T>,
    gamma: f64,
    alpha: f64,
) -> Result<Tensor<T>> {
    if gamma != 2.0 {
        return Err(Error::config(format!("focal gamma {gamma} unsupported (only 2)")));
    }
    let (b, h, w) = check_shapes(logits, target)?;
    let y = one_hot(target)?;
    let alpha_t = {
        let t = target.data();
        let a: Vec<T> = t
            .iter()
            .map(|&v| T::from_f64(if v == T::one() { alpha } else { 1.0 - alpha }))
            .collect();
        drop(t);
        Tensor::from_vec(a, &[b, h, w, 1])?
    };
    let logp = log_softmax_channel_last(tape, logits)?;
    let logpt = tape.sum(&tape.mul(&logp, &y)?, &[3], true)?; // [B,H,W,1]
    let pt = tape.exp(&logpt)?;
    let miss = tape.add_const(&tape.scale(&pt, -1.0)?, 1.0)?; // 1 − p_t
    let focus = tape.mul(&miss, &miss)?; // γ = 2
    let weighted = tape.mul(&tape.mul(&alpha_t, &focus)?, &tape.scale(&logpt, -1.0)?)?;
    let total = tape.sum(&weighted, &[], false)?;
    tape.scale(&total, 1.0 / (b * h * w) as f64)
}

/// Soft intersection-over-union loss: with p the softmax probabilities and y
/// the one-hot target, `1 − Σ p·y / Σ (p + y − p·y)`, both sums running over
/// every pixel and both classes. Zero for a perfect hard prediction.
pub fn miou_loss<T: Scalar>(
    tape: &Tape<T>,
    logits: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_shapes(logits, target)?;
    let y = one_hot(target)?;
    let p = tape.exp(&log_softmax_channel_last(tape, logits)?)?;
    let inter_terms = tape.mul(&p, &y)?;
    let inter = tape.sum(&inter_terms, &[], false)?;
    let union_terms = tape.sub(&tape.add(&p, &y)?, &inter_terms)?;
    let union = tape.sum(&union_terms, &[], false)?;
    tape.add_const(&tape.scale(&tape.div(&inter, &union)?, -1.0)?, 1.0)
}
