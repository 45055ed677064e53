//! The seeded epoch loop: shuffle, optional paired flips, forward, loss,
//! backward, AdamW; per-epoch validation with best-checkpoint retention.

use crate::error::{Error, Result};
use crate::io::dataset::{batch, BitemporalSample};
use crate::metrics::{confusion, ConfusionCounts, MetricsReport};
use crate::model::{predict, GradFormer};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tape};
use crate::train::optim::{lr_at, AdamW};
use crate::train::TrainConfig;

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_f1: f64,
    pub val_iou: f64,
    pub val_oa: f64,
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} lr={} loss={} val_f1={} val_iou={} val_oa={}",
            self.epoch, self.lr, self.loss, self.val_f1, self.val_iou, self.val_oa
        )
    }
}

/// Result of a run: the best-validation-F1 weights (one `Vec<T>` per model
/// parameter, in `model.parameters()` order) and the full epoch history.
pub struct TrainOutcome<T> {
    pub best_weights: Vec<Vec<T>>,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub history: Vec<EpochStats>,
}

/// Runs prediction over `samples` and accumulates confusion counts.
pub fn evaluate_split<T: Scalar>(
    model: &GradFormer<T>,
    samples: &[BitemporalSample<T>],
    batch_size: usize,
) -> Result<MetricsReport> {
    let mut counts = ConfusionCounts::default();
    let indices: Vec<usize> = (0..samples.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (pre, post, mask) = batch(samples, chunk)?;
        let tape = Tape::no_grad();
        let logits = model.forward(&tape, &pre, &post)?;
        let pred = predict(&logits)?;
        counts.add(&confusion(&pred, &mask)?);
    }
    Ok(MetricsReport::from_counts(counts))
}

/// Trains `model` in place and reports the best epoch. `on_epoch` fires after
/// each epoch with the freshly computed stats (the CLI streams log lines from
/// it); pass a closure that ignores its argument when logging is not needed.
pub fn train<T: Scalar>(
    model: &GradFormer<T>,
    train_set: &[BitemporalSample<T>],
    val_set: &[BitemporalSample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract("training requires nonempty train and val splits".to_string()));
    }
    let params = model.parameters();
    let mut optimizer = AdamW::new(&params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best_weights: Vec<Vec<T>> = params.iter().map(|p| p.tensor().to_vec()).collect();
    let mut best_epoch = 0usize;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.lr0, &cfg.decay_epochs, cfg.decay_factor);
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut sample_count = 0usize;
        for chunk in order.chunks(cfg.batch) {
            // Augmentation draws two coins per sample, in chunk order, so the
            // stream layout is independent of batch contents.
            let viewed: Vec<BitemporalSample<T>> = chunk
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    if cfg.augment_flips {
                        let (h, v) = (rng.coin(), rng.coin());
                        if h || v {
                            return s.flipped(h, v);
                        }
                    }
                    BitemporalSample {
                        pre: s.pre.clone(),
                        post: s.post.clone(),
                        mask: s.mask.clone(),
                    }
                })
                .collect();
            let all: Vec<usize> = (0..viewed.len()).collect();
            let (pre, post, mask) = batch(&viewed, &all)?;

            let tape = Tape::new();
            let logits = model.forward(&tape, &pre, &post)?;
            let loss = cfg.loss.evaluate(&tape, &logits, &mask)?;
            model.zero_grad();
            tape.backward(&loss)?;
            optimizer.step(&params, lr)?;

            loss_sum += loss.to_vec()[0].to_f64() * chunk.len() as f64;
            sample_count += chunk.len();
        }

        let report = evaluate_split(model, val_set, cfg.batch)?;
        let stats = EpochStats {
            epoch,
            lr,
            loss: loss_sum / sample_count as f64,
            val_f1: report.f1,
            val_iou: report.iou,
            val_oa: report.oa,
        };
        if stats.val_f1 > best_f1 {
            best_f1 = stats.val_f1;
            best_epoch = epoch;
            best_weights = params.iter().map(|p| p.tensor().to_vec()).collect();
        }
        on_epoch(&stats);
        history.push(stats);
    }

    Ok(TrainOutcome { best_weights, best_epoch, best_f1, history })
}

/// Copies a weight snapshot (as produced by [`TrainOutcome::best_weights`])
/// back into the model.
pub fn restore_weights<T: Scalar>(model: &GradFormer<T>, weights: &[Vec<T>]) -> Result<()> {
    let params = model.parameters();
    if params.len() != weights.len() {
        return Err(Error::contract(format!(
            "snapshot has {} tensors, model has {}",
            weights.len(),
            params.len()
        )));
    }
    for (p, w) in params.iter().zip(weights) {
        p.set_data(w.clone())?;
    }
    Ok(())
}
