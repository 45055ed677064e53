//! The gradient-verification sweep: every differentiable module checked in
//! 64-bit against finite differences, ending with the full tiny model through
//! its loss. Shared by the `gradcheck` CLI command and the integration tests.

use crate::encoder::{AfrarModule, EncoderBlock};
use crate::error::Result;
use crate::fusion::DaModule;
use crate::glfr::{AttentionKind, GlfrModule};
use crate::model::{GradFormer, ModelConfig};
use crate::rng::Rng;
use crate::sea::SeaModule;
use crate::tensor::{gradcheck, GradReport, Parameter, Tensor};
use crate::train::loss::{cross_entropy_loss, focal_loss, miou_loss};
use crate::train::LossKind;

/// One independently runnable check. Construction is cheap; `run` does the
/// finite-difference work, so callers can stream results entry by entry.
pub struct SuiteEntry {
    pub label: &'static str,
    runner: Box<dyn Fn(f64) -> Result<GradReport>>,
}

impl SuiteEntry {
    pub fn run(&self, tol: f64) -> Result<GradReport> {
        (self.runner)(tol)
    }
}

fn rand_param(rng: &mut Rng, name: &str, shape: &[usize], lo: f64, hi: f64) -> Parameter<f64> {
    Parameter::new(name, Tensor::from_fn(shape, |_| rng.uniform(lo, hi)))
}

fn rand_mask(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.coin() { 1.0 } else { 0.0 })
}

fn with_params<'a>(
    first: &[&'a Parameter<f64>],
    params: &'a [Parameter<f64>],
) -> Vec<&'a Parameter<f64>> {
    let mut refs: Vec<&Parameter<f64>> = first.to_vec();
    refs.extend(params.iter());
    refs
}

/// Builds the full roster of checks. `model_cfg` is used for the final
/// whole-model entry; everything else runs at fixed small widths.
pub fn suite_entries(model_cfg: &ModelConfig) -> Result<Vec<SuiteEntry>> {
    let mut rng = Rng::new(90210);
    let mut entries = Vec::new();
    let mut push = |label: &'static str, runner: Box<dyn Fn(f64) -> Result<GradReport>>| {
        entries.push(SuiteEntry { label, runner });
    };

    // SEA, pushed off its identity init so every parameter has signal.
    {
        let sea = SeaModule::<f64>::new("sea", 6, 1e-5);
        let mut params = Vec::new();
        sea.collect_params(&mut params);
        for p in &params {
            let n = p.numel();
            p.set_data((0..n).map(|_| rng.uniform(-0.6, 0.6)).collect())?;
        }
        let x = rand_param(&mut rng, "x", &[2, 6, 5, 5], -1.0, 1.0);
        push(
            "sea",
            Box::new(move |tol| {
                let refs = with_params(&[&x], &params);
                gradcheck("sea", |tape| sea.forward(tape, x.tensor()), &refs, 4e-4, tol, 64, 400, 101)
            }),
        );
    }

    // GLFR in both attention modes.
    for (label, kind) in [
        ("glfr-differential", AttentionKind::Differential),
        ("glfr-simple", AttentionKind::Simple),
    ] {
        let g = GlfrModule::<f64>::new(&mut rng, "glfr", 8, 2, 0.8, kind)?;
        let x = rand_param(&mut rng, "x", &[1, 8, 4, 4], -1.0, 1.0);
        let mut params = Vec::new();
        g.collect_params(&mut params);
        push(
            label,
            Box::new(move |tol| {
                let refs = with_params(&[&x], &params);
                gradcheck(label, |tape| g.forward(tape, x.tensor()), &refs, 4e-4, tol, 64, 400, 102)
            }),
        );
    }

    // AFRAR split/concat around GLFR + SEA.
    {
        let a = AfrarModule::<f64>::new(&mut rng, "afrar", 8, 2, 0.8, 1e-5, AttentionKind::Differential)?;
        let x = rand_param(&mut rng, "x", &[1, 8, 4, 4], -1.0, 1.0);
        let mut params = Vec::new();
        a.collect_params(&mut params);
        push(
            "afrar",
            Box::new(move |tol| {
                let refs = with_params(&[&x], &params);
                gradcheck("afrar", |tape| a.forward(tape, x.tensor()), &refs, 4e-4, tol, 64, 400, 103)
            }),
        );
    }

    // A whole pre-norm encoder block. Spatial extent 8×8: instance-norm
    // statistics over tiny maps are badly conditioned and make the finite
    // differences themselves unreliable, not the gradients.
    {
        let b = EncoderBlock::<f64>::new(&mut rng, "block", 16, 2, 0.8, 1e-5, 2, AttentionKind::Differential)?;
        let x = rand_param(&mut rng, "x", &[1, 16, 8, 8], -1.0, 1.0);
        let mut params = Vec::new();
        b.collect_params(&mut params);
        push(
            "encoder-block",
            Box::new(move |tol| {
                let refs = with_params(&[&x], &params);
                gradcheck("encoder-block", |tape| b.forward(tape, x.tensor()), &refs, 4e-4, tol, 64, 400, 104)
            }),
        );
    }

    // DA fusion of a pre/post pair.
    {
        let da = DaModule::<f64>::new(&mut rng, "da", 6);
        let pre = rand_param(&mut rng, "pre", &[2, 6, 4, 4], -1.0, 1.0);
        let post = rand_param(&mut rng, "post", &[2, 6, 4, 4], -1.0, 1.0);
        let mut params = Vec::new();
        da.collect_params(&mut params);
        push(
            "fusion-da",
            Box::new(move |tol| {
                let refs = with_params(&[&pre, &post], &params);
                gradcheck(
                    "fusion-da",
                    |tape| da.forward(tape, pre.tensor(), post.tensor()),
                    &refs,
                    4e-4,
                    tol,
                    64,
                    400,
                    105,
                )
            }),
        );
    }

    // Decoder over four stage maps (finest 8×8, halving per stage).
    {
        let dec = crate::decoder::DecoderModule::<f64>::new(&mut rng, "dec", &[4, 4, 4, 4], 8, 2);
        let maps: Vec<Parameter<f64>> = (0..4)
            .map(|i| rand_param(&mut rng, &format!("map{i}"), &[1, 4, 8 >> i, 8 >> i], -1.0, 1.0))
            .collect();
        let mut params = Vec::new();
        dec.collect_params(&mut params);
        push(
            "decoder",
            Box::new(move |tol| {
                let refs = with_params(&maps.iter().collect::<Vec<_>>(), &params);
                gradcheck(
                    "decoder",
                    |tape| {
                        let fused: Vec<Tensor<f64>> =
                            maps.iter().map(|m| m.tensor().clone()).collect();
                        dec.forward(tape, &fused)
                    },
                    &refs,
                    4e-4,
                    tol,
                    64,
                    400,
                    106,
                )
            }),
        );
    }

    // The three losses, differentiated through the logits.
    for kind in [LossKind::CrossEntropy, LossKind::Focal, LossKind::Miou] {
        let target = rand_mask(&mut rng, &[2, 4, 4]);
        let logits = rand_param(&mut rng, "logits", &[2, 2, 4, 4], -2.0, 2.0);
        let label: &'static str = match kind {
            LossKind::CrossEntropy => "loss-cross_entropy",
            LossKind::Focal => "loss-focal",
            LossKind::Miou => "loss-miou",
        };
        push(
            label,
            Box::new(move |tol| {
                gradcheck(
                    label,
                    |tape| match kind {
                        LossKind::CrossEntropy => cross_entropy_loss(tape, logits.tensor(), &target),
                        LossKind::Focal => focal_loss(tape, logits.tensor(), &target, 2.0, 0.25),
                        LossKind::Miou => miou_loss(tape, logits.tensor(), &target),
                    },
                    &[&logits],
                    4e-4,
                    tol,
                    64,
                    400,
                    107,
                )
            }),
        );
    }

    // Full model through the cross-entropy loss, at base step 1e-4: the
    // output is one scalar, so differences stay far above cancellation noise
    // even at the smaller step.
    {
        let model = GradFormer::<f64>::build(model_cfg.clone())?;
        let pre = rand_param(&mut rng, "pre", &[1, 3, 32, 32], 0.0, 1.0);
        let post = rand_param(&mut rng, "post", &[1, 3, 32, 32], 0.0, 1.0);
        let target = rand_mask(&mut rng, &[1, 32, 32]);
        push(
            "model",
            Box::new(move |tol| {
                let params = model.parameters();
                let refs = with_params(&[&pre, &post], &params);
                gradcheck(
                    "model",
                    |tape| {
                        let logits = model.forward(tape, pre.tensor(), post.tensor())?;
                        cross_entropy_loss(tape, &logits, &target)
                    },
                    &refs,
                    1e-4,
                    tol,
                    64,
                    400,
                    108,
                )
            }),
        );
    }

    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    // The expensive sweep itself runs as an integration test and via the CLI;
    // here we only pin that the roster stays complete and constructible.
    #[test]
    fn suite_covers_every_module() {
        let entries = suite_entries(&ModelConfig::tiny()).unwrap();
        let labels: Vec<&str> = entries.iter().map(|e| e.label).collect();
        assert_eq!(
            labels,
            vec![
                "sea",
                "glfr-differential",
                "glfr-simple",
                "afrar",
                "encoder-block",
                "fusion-da",
                "decoder",
                "loss-cross_entropy",
                "loss-focal",
                "loss-miou",
                "model",
            ]
        );
    }

    #[test]
    fn cheapest_entry_runs_and_passes() {
        let entries = suite_entries(&ModelConfig::tiny()).unwrap();
        let loss = entries.iter().find(|e| e.label == "loss-cross_entropy").unwrap();
        let report = loss.run(1e-5).unwrap();
        assert!(report.pass(), "{report}");
    }
}
