//! Flat `key = value` configuration text.
//!
//! One syntax serves three places: config files given to the CLI, the snapshot
//! embedded in every checkpoint, and metric reports. Lines are `key = value`
//! with `#` comments; list values are comma-separated. Unknown keys are
//! errors — silently ignoring a typo like `decay_epocs` would be worse than
//! failing — and every parse error carries its line number.

use crate::error::{Error, Result};
use crate::glfr::AttentionKind;
use crate::model::ModelConfig;
use crate::train::{LossKind, TrainConfig};

// ── Generic line parsing ────────────────────────────────────────────────────

/// Splits text into (line number, key, value) triples, 1-based lines.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let no = idx + 1;
        let Some(eq) = line.find('=') else {
            return Err(Error::config(format!("line {no}: expected `key = value`, got \"{line}\"")));
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if key.is_empty() {
            return Err(Error::config(format!("line {no}: empty key")));
        }
        out.push((no, key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn parse_scalar<V: std::str::FromStr>(no: usize, key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::config(format!("line {no}: cannot parse {key} value \"{value}\"")))
}

fn parse_list<V: std::str::FromStr>(no: usize, key: &str, value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .map(|part| parse_scalar(no, key, part.trim()))
        .collect()
}

fn parse_array4<V: std::str::FromStr + Copy>(no: usize, key: &str, value: &str) -> Result<[V; 4]> {
    let items: Vec<V> = parse_list(no, key, value)?;
    items
        .try_into()
        .map_err(|_| Error::config(format!("line {no}: {key} needs exactly 4 values")))
}

fn parse_bool(no: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("line {no}: {key} must be true or false, got \"{value}\""))),
    }
}

pub fn parse_attention(s: &str) -> Result<AttentionKind> {
    match s {
        "differential" | "diff" => Ok(AttentionKind::Differential),
        "simple" => Ok(AttentionKind::Simple),
        _ => Err(Error::config(format!("attention must be differential|simple, got \"{s}\""))),
    }
}

pub fn attention_name(kind: AttentionKind) -> &'static str {
    match kind {
        AttentionKind::Differential => "differential",
        AttentionKind::Simple => "simple",
    }
}

// ── Full run configuration ──────────────────────────────────────────────────

/// Model architecture plus training hyperparameters, as read from one file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { model: ModelConfig::default(), train: TrainConfig::default() }
    }
}

impl RunConfig {
    pub fn tiny() -> Self {
        RunConfig { model: ModelConfig::tiny(), ..RunConfig::default() }
    }

    /// Applies `key = value` overrides on top of `self`. Unknown keys and
    /// malformed values are errors naming the line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, key, value) in parse_lines(text)? {
            let v = value.as_str();
            match key.as_str() {
                "stage_channels" => self.model.stage_channels = parse_array4(no, &key, v)?,
                "stage_depths" => self.model.stage_depths = parse_array4(no, &key, v)?,
                "heads" => self.model.heads = parse_scalar(no, &key, v)?,
                "lambda_init" => self.model.lambda_init = parse_scalar(no, &key, v)?,
                "eps" => self.model.eps = parse_scalar(no, &key, v)?,
                "mlp_ratio" => self.model.mlp_ratio = parse_scalar(no, &key, v)?,
                "decoder_width" => self.model.decoder_width = parse_scalar(no, &key, v)?,
                "num_classes" => self.model.num_classes = parse_scalar(no, &key, v)?,
                "attention" => {
                    self.model.attention = parse_attention(v)
                        .map_err(|e| Error::config(format!("line {no}: {e}")))?
                }
                // One user-facing seed pins both weight init and the epoch
                // shuffle/augmentation stream.
                "seed" => {
                    self.model.seed = parse_scalar(no, &key, v)?;
                    self.train.seed = self.model.seed;
                }
                "lr0" => self.train.lr0 = parse_scalar(no, &key, v)?,
                "decay_epochs" => self.train.decay_epochs = parse_list(no, &key, v)?,
                "decay_factor" => self.train.decay_factor = parse_scalar(no, &key, v)?,
                "epochs" => self.train.epochs = parse_scalar(no, &key, v)?,
                "batch" => self.train.batch = parse_scalar(no, &key, v)?,
                "weight_decay" => self.train.weight_decay = parse_scalar(no, &key, v)?,
                "beta1" => self.train.beta1 = parse_scalar(no, &key, v)?,
                "beta2" => self.train.beta2 = parse_scalar(no, &key, v)?,
                "adam_eps" => self.train.adam_eps = parse_scalar(no, &key, v)?,
                "loss" => {
                    self.train.loss = LossKind::parse(v)
                        .map_err(|e| Error::config(format!("line {no}: {e}")))?
                }
                "augment_flips" => self.train.augment_flips = parse_bool(no, &key, v)?,
                _ => return Err(Error::config(format!("line {no}: unknown key \"{key}\""))),
            }
        }
        Ok(())
    }

    /// Resolves a `--config` argument: the presets `tiny` and `default`, or a
    /// path to a file of overrides applied on top of the defaults.
    pub fn resolve(arg: &str) -> Result<RunConfig> {
        match arg {
            "tiny" => Ok(RunConfig::tiny()),
            "default" => Ok(RunConfig::default()),
            path => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::config(format!("cannot read config \"{path}\": {e}"))
                })?;
                let mut cfg = RunConfig::default();
                cfg.apply_text(&text)
                    .map_err(|e| Error::config(format!("{path}: {e}")))?;
                Ok(cfg)
            }
        }
    }

    /// Serializes every field; `apply_text` on the result reproduces `self`.
    pub fn snapshot(&self) -> String {
        let list = |xs: &[usize]| {
            xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
        };
        format!(
            "stage_channels = {}\nstage_depths = {}\nheads = {}\nlambda_init = {}\n\
             eps = {}\nmlp_ratio = {}\ndecoder_width = {}\nnum_classes = {}\n\
             attention = {}\nseed = {}\nlr0 = {}\ndecay_epochs = {}\ndecay_factor = {}\n\
             epochs = {}\nbatch = {}\nweight_decay = {}\nbeta1 = {}\nbeta2 = {}\n\
             adam_eps = {}\nloss = {}\naugment_flips = {}\n",
            list(&self.model.stage_channels),
            list(&self.model.stage_depths),
            self.model.heads,
            self.model.lambda_init,
            self.model.eps,
            self.model.mlp_ratio,
            self.model.decoder_width,
            self.model.num_classes,
            attention_name(self.model.attention),
            self.model.seed,
            self.train.lr0,
            list(&self.train.decay_epochs),
            self.train.decay_factor,
            self.train.epochs,
            self.train.batch,
            self.train.weight_decay,
            self.train.beta1,
            self.train.beta2,
            self.train.adam_eps,
            self.train.loss.name(),
            self.train.augment_flips,
        )
    }
}
