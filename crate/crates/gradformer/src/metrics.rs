//! Change-class evaluation metrics: confusion counts plus the derived F1,
//! intersection-over-union, and overall accuracy. Counts are plain sums, so
//! dataset-level scores come from accumulating per-sample counts and deriving
//! once at the end (micro-averaging).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

// ── Confusion counts ───────────────────────────────────────────────────────

/// Pixel counts with change as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Accumulate another sample's counts; addition is order-independent, so
    /// dataset totals do not depend on evaluation order.
    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Count agreement between a predicted and a reference binary mask. Both must
/// hold exactly 0/1 values with identical shapes.
pub fn confusion<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut c = ConfusionCounts::default();
    let p = pred.data();
    let g = gt.data();
    for (&pv, &gv) in p.iter().zip(g.iter()) {
        let pb = classify_binary(pv)?;
        let gb = classify_binary(gv)?;
        match (pb, gb) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn classify_binary<T: Scalar>(v: T) -> Result<bool> {
    if v == T::one() {
        Ok(true)
    } else if v == T::zero() {
        Ok(false)
    } else {
        Err(Error::contract(format!("mask value {} is not 0/1", v.to_f64())))
    }
}

// ── Derived scores ─────────────────────────────────────────────────────────

/// F1 = 2tp / (2tp + fp + fn); 0 when the denominator vanishes.
pub fn f1(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// IoU = tp / (tp + fp + fn); 0 when the denominator vanishes.
pub fn iou(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp + c.fn_)
}

/// Overall accuracy as a percentage of all pixels.
pub fn oa(c: &ConfusionCounts) -> f64 {
    100.0 * ratio(c.tp + c.tn, c.total())
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

// ── Report ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        MetricsReport { f1: f1(&counts), iou: iou(&counts), oa: oa(&counts), counts }
    }

    /// Serialize as stable `key=value` lines (consumed by scripts and the
    /// round-trip parser below).
    pub fn to_key_values(&self) -> String {
        format!(
            "f1={:.6}\niou={:.6}\noa={:.4}\ntp={}\nfp={}\nfn={}\ntn={}\n",
            self.f1, self.iou, self.oa, self.counts.tp, self.counts.fp, self.counts.fn_, self.counts.tn
        )
    }

    /// Parse the `key=value` form; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<MetricsReport> {
        let mut f1v = None;
        let mut iouv = None;
        let mut oav = None;
        let mut c = ConfusionCounts::default();
        let mut seen = 0u32;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", ln + 1)))?;
            let fail = |what: &str| Error::config(format!("line {}: bad {what}: {v}", ln + 1));
            match k {
                "f1" => f1v = Some(v.parse::<f64>().map_err(|_| fail("f1"))?),
                "iou" => iouv = Some(v.parse::<f64>().map_err(|_| fail("iou"))?),
                "oa" => oav = Some(v.parse::<f64>().map_err(|_| fail("oa"))?),
                "tp" => c.tp = v.parse().map_err(|_| fail("tp"))?,
                "fp" => c.fp = v.parse().map_err(|_| fail("fp"))?,
                "fn" => c.fn_ = v.parse().map_err(|_| fail("fn"))?,
                "tn" => c.tn = v.parse().map_err(|_| fail("tn"))?,
                other => return Err(Error::config(format!("line {}: unknown key {other}", ln + 1))),
            }
            seen += 1;
        }
        if seen < 7 {
            return Err(Error::config("incomplete metrics report".to_string()));
        }
        Ok(MetricsReport {
            f1: f1v.unwrap(),
            iou: iouv.unwrap(),
            oa: oav.unwrap(),
            counts: c,
        })
    }
}
