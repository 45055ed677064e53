//! End-to-end optimization: loss functions, AdamW, and the epoch loop.

pub mod loss;
pub mod optim;
pub mod run;

pub use loss::LossKind;

use crate::error::{Error, Result};

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub augment_flips: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            decay_epochs: vec![100, 200],
            decay_factor: 0.1,
            epochs: 30,
            batch: 2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            loss: LossKind::CrossEntropy,
            augment_flips: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        // lr0 = 0 is allowed on purpose: a frozen run (nothing moves when
        // weight decay is also 0) is a useful diagnostic.
        if self.lr0 < 0.0 || !self.lr0.is_finite() {
            problems.push(format!("lr0 must be finite and ≥ 0, got {}", self.lr0));
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            problems.push(format!("decay_epochs must be strictly increasing, got {:?}", self.decay_epochs));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            problems.push(format!("decay_factor must be positive, got {}", self.decay_factor));
        }
        if self.epochs == 0 {
            problems.push("epochs must be ≥ 1".to_string());
        }
        if self.batch == 0 {
            problems.push("batch must be ≥ 1".to_string());
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            problems.push(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            problems.push(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }
}
