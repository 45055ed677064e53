//! Central finite-difference verification of recorded gradients.
//!
//! The checker runs in f64 only and uses a fourth-order centered scheme:
//! the plain centered differences D(h) and D(h/2) are Richardson-combined as
//! (4·D(h/2) − D(h))/3, cancelling the h² truncation term. That matters here
//! because normalization layers and attention softmaxes have enough curvature
//! that second-order truncation alone can exceed a 1e-5 relative tolerance at
//! any step size (the h² term and the rounding-cancellation term cross above
//! it); the fourth-order scheme pushes truncation to O(h⁴) while keeping the
//! step large enough that rounding noise stays negligible.
//!
//! Procedure: run the function once on a recording tape and backprop a basis
//! seed per checked output element to collect analytic gradients; then, for
//! every checked input element, re-evaluate the function at ±step and ±step/2
//! (no recording) and compare the extrapolated difference against the
//! analytic value. Large inputs/outputs are subsampled deterministically from
//! `seed` so whole models stay checkable in bounded time.

use super::{Parameter, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Relative-error floor: differences below this absolute magnitude are
/// treated as zero rather than amplified by a tiny denominator.
///
/// Sized for the noise of the method itself. A partial whose true value is
/// exactly zero (a key bias feeding a shift-invariant softmax, say) measures
/// only the rounding cancellation of the difference scheme — roughly
/// ε·|f|/step, about 1e-11 for outputs of magnitude ten at the default step.
/// The floor turns that into a reported relative error well under the 1e-5
/// tolerance instead of a spurious failure, while staying far below any
/// gradient magnitude a real defect would disturb.
pub const REL_ERR_FLOOR: f64 = 2e-6;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Name of the checked function (for printed summaries).
    pub label: String,
    /// Number of (output, input) partial derivatives compared.
    pub compared: usize,
    /// Largest relative error observed.
    pub max_rel_err: f64,
    /// Parameter and flat element index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    /// Tolerance the check was run against.
    pub tol: f64,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.compared > 0 && self.max_rel_err < self.tol
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.pass() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{}: {} (max rel err {:.3e} over {} partials, tol {:.1e})",
            self.label, verdict, self.max_rel_err, self.compared, self.tol
        )?;
        if let Some((name, idx)) = &self.worst {
            write!(f, " worst at {name}[{idx}]")?;
        }
        Ok(())
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs()).max(REL_ERR_FLOOR);
    (a - n).abs() / scale
}

/// Deterministically choose up to `cap` distinct indices from `0..n`.
fn sample_indices(n: usize, cap: usize, rng: &mut Rng) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut all: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut all);
    let mut picked: Vec<usize> = all.into_iter().take(cap).collect();
    picked.sort_unstable();
    picked
}

/// Compare recorded gradients of `f` against central finite differences.
///
/// * `f` rebuilds the computation from scratch on the given tape each call
///   and must be deterministic.
/// * `inputs` are the leaves to differentiate with respect to; `f` reads them
///   through their shared handles.
/// * At most `max_output_elems` output coordinates and `max_input_elems`
///   input coordinates (across all inputs) are compared; smaller problems are
///   checked exhaustively.
///
/// Any prior gradient state on `inputs` is cleared. On return the inputs hold
/// unspecified gradients; call `zero_grad` before reusing them for training.
pub fn gradcheck<F>(
    label: &str,
    f: F,
    inputs: &[&Parameter<f64>],
    step: f64,
    tol: f64,
    max_output_elems: usize,
    max_input_elems: usize,
    seed: u64,
) -> Result<GradReport>
where
    F: Fn(&Tape<f64>) -> Result<Tensor<f64>>,
{
    if step <= 0.0 || tol <= 0.0 {
        return Err(Error::contract("gradcheck step and tol must be positive".to_string()));
    }
    let mut rng = Rng::new(seed ^ 0xC0FF_EE00_D15E_A5E5);

    // One recorded forward; keep the tape around for repeated seeded sweeps.
    let tape = Tape::new();
    let y0 = f(&tape)?;
    let ny = y0.numel();
    let out_idx = sample_indices(ny, max_output_elems.max(1), &mut rng);

    // Analytic rows: for each checked output element, the gradient in every input.
    let mut analytic: Vec<Vec<Vec<f64>>> = Vec::with_capacity(out_idx.len());
    for &j in &out_idx {
        for p in inputs {
            p.zero_grad();
        }
        let mut seed_vec = vec![0.0; ny];
        seed_vec[j] = 1.0;
        tape.backward_seeded(&y0, &seed_vec)?;
        analytic.push(
            inputs
                .iter()
                .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
                .collect(),
        );
    }
    drop(tape);
    for p in inputs {
        p.zero_grad();
    }

    // Spread the input-element budget across inputs proportionally to size.
    let total: usize = inputs.iter().map(|p| p.numel()).sum();
    let mut compared = 0usize;
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for (pi, p) in inputs.iter().enumerate() {
        let share = if total <= max_input_elems {
            p.numel()
        } else {
            ((p.numel() * max_input_elems + total - 1) / total).clamp(1, p.numel())
        };
        let elems = sample_indices(p.numel(), share, &mut rng);
        for &i in &elems {
            let orig = p.tensor().data()[i];
            let eval = |delta: f64| -> Result<Tensor<f64>> {
                p.tensor().data_mut()[i] = orig + delta;
                f(&Tape::no_grad())
            };
            let y_p1 = eval(step)?;
            let y_m1 = eval(-step)?;
            let y_p2 = eval(step / 2.0)?;
            let y_m2 = eval(-step / 2.0)?;
            p.tensor().data_mut()[i] = orig;
            let (p1, m1, p2, m2) = (y_p1.data(), y_m1.data(), y_p2.data(), y_m2.data());
            for (row, &j) in out_idx.iter().enumerate() {
                let d_full = (p1[j] - m1[j]) / (2.0 * step);
                let d_half = (p2[j] - m2[j]) / step;
                let numeric = (4.0 * d_half - d_full) / 3.0;
                let an = analytic[row][pi][i];
                let e = rel_err(an, numeric);
                compared += 1;
                if e > max_rel {
                    max_rel = e;
                    worst = Some((p.name().to_string(), i));
                }
            }
        }
    }

    Ok(GradReport {
        label: label.to_string(),
        compared,
        max_rel_err: max_rel,
        worst,
        tol,
    })
}

/// `gradcheck` with the house defaults: step 4e-4, relative tolerance 1e-5,
/// exhaustive up to 64 output × 400 input elements.
///
/// The fourth-order scheme keeps truncation negligible at this step, and the
/// larger step keeps rounding noise on near-zero partials a few times under
/// the tolerance even for outputs of magnitude ten or so.
pub fn gradcheck_default<F>(label: &str, f: F, inputs: &[&Parameter<f64>], seed: u64) -> Result<GradReport>
where
    F: Fn(&Tape<f64>) -> Result<Tensor<f64>>,
{
    gradcheck(label, f, inputs, 4e-4, 1e-5, 64, 400, seed)
}
