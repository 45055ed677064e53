//! Command-line front end: dataset synthesis, training, evaluation, single-pair
//! inference, gradient verification, and parameter reporting.
//!
//! Exit statuses: 0 success, 1 runtime failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gradformer::config::{parse_attention, RunConfig};
use gradformer::error::{Error, Result};
use gradformer::io::checkpoint::{load_into, read_checkpoint, save_checkpoint};
use gradformer::io::dataset::{load_split, BitemporalSample};
use gradformer::io::pnm::{read_image, write_mask};
use gradformer::io::synth::{generate_dataset, SynthOptions};
use gradformer::io::tensorfile::write_tensor;
use gradformer::model::{predict, GradFormer};
use gradformer::suite::suite_entries;
use gradformer::tensor::{Tape, Tensor};
use gradformer::train::run::{evaluate_split, restore_weights, train};
use gradformer::train::LossKind;

/// Reference parameter total reported for the full-size architecture, in
/// millions; `params` prints the deviation of the built model against it.
const REFERENCE_PARAMS_M: f64 = 10.90;

#[derive(Parser)]
#[command(
    name = "gradformer",
    about = "Siamese change-detection transformer with differential attention",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic bitemporal dataset
    Synth(SynthArgs),
    /// Train a model and keep the best-validation checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Predict a change mask for one image pair
    Infer(InferArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Report parameter counts for a configuration
    Params(ParamsArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Number of samples
    #[arg(long)]
    num: usize,
    /// Image side length; must be divisible by 32
    #[arg(long)]
    size: usize,
    /// Generator seed
    #[arg(long)]
    seed: u64,
    /// Emit only brightness/gain pseudo-changes (empty masks)
    #[arg(long)]
    distractors_only: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory with A/, B/, label/ and split lists
    #[arg(long)]
    data: PathBuf,
    /// Preset name (tiny | default) or path to a key = value file
    #[arg(long)]
    config: String,
    /// Number of epochs (overrides the config value)
    #[arg(long)]
    epochs: usize,
    /// Checkpoint output path; the epoch log goes to <out>.log
    #[arg(long)]
    out: PathBuf,
    /// Override the model and shuffle seed
    #[arg(long)]
    seed: Option<u64>,
    /// Loss function: ce | focal | miou
    #[arg(long)]
    loss: Option<String>,
    /// Attention variant: diff | simple
    #[arg(long)]
    attention: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Split list to use
    #[arg(long, default_value = "test")]
    split: String,
    /// Where to write the key=value metrics report
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint to run
    #[arg(long)]
    ckpt: PathBuf,
    /// Earlier image (P6)
    #[arg(long)]
    pre: PathBuf,
    /// Later image (P6)
    #[arg(long)]
    post: PathBuf,
    /// Output mask path (P5; change = 255)
    #[arg(long)]
    out: PathBuf,
    /// Also write raw logits as a tensor container
    #[arg(long)]
    logits: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Config for the whole-model entry
    #[arg(long, default_value = "tiny")]
    config: String,
    /// Maximum relative error accepted
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

#[derive(Args)]
struct ParamsArgs {
    /// Preset name (tiny | default) or path to a key = value file
    #[arg(long)]
    config: String,
}

fn main() -> ExitCode {
    // Optional cap on internal parallelism. Every code path here is currently
    // sequential, so any positive value is already satisfied; the variable is
    // validated so typos fail loudly instead of being ignored.
    if let Ok(v) = std::env::var("GRADFORMER_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {}
            _ => {
                eprintln!("error: GRADFORMER_THREADS must be a positive integer, got \"{v}\"");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Params(a) => cmd_params(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<ExitCode> {
    if a.size == 0 || a.size % 32 != 0 {
        return Err(Error::config(format!("size must be divisible by 32, got {}", a.size)));
    }
    if a.num == 0 {
        return Err(Error::config("num must be at least 1".to_string()));
    }
    let opts = SynthOptions {
        num: a.num,
        size: a.size,
        seed: a.seed,
        distractors_only: a.distractors_only,
    };
    generate_dataset(&a.out, &opts)?;
    println!("wrote {} samples of {}×{} to {}", a.num, a.size, a.size, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::resolve(&a.config)?;
    cfg.train.epochs = a.epochs;
    if let Some(seed) = a.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(loss) = &a.loss {
        cfg.train.loss = LossKind::parse(loss)?;
    }
    if let Some(attention) = &a.attention {
        cfg.model.attention = parse_attention(attention)?;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;

    let train_set: Vec<BitemporalSample<f32>> = load_split(&a.data, "train")?;
    let val_set: Vec<BitemporalSample<f32>> = load_split(&a.data, "val")?;
    let model = GradFormer::<f32>::build(cfg.model.clone())?;

    let log_path = log_path_for(&a.out);
    let mut log = String::new();
    let outcome = train(&model, &train_set, &val_set, &cfg.train, |stats| {
        let line = stats.log_line();
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    std::fs::write(&log_path, &log)?;

    restore_weights(&model, &outcome.best_weights)?;
    save_checkpoint(&a.out, &model.parameters(), &cfg.snapshot())?;
    println!(
        "best epoch {} (val_f1={}); checkpoint {} log {}",
        outcome.best_epoch,
        outcome.best_f1,
        a.out.display(),
        log_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// `model.ckpt` logs to `model.ckpt.log`.
fn log_path_for(ckpt: &std::path::Path) -> PathBuf {
    let mut name = ckpt.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".log");
    ckpt.with_file_name(name)
}

/// Rebuilds the model a checkpoint was saved from and loads its weights.
fn model_from_checkpoint(path: &std::path::Path) -> Result<(GradFormer<f32>, RunConfig)> {
    let data = read_checkpoint::<f32>(path)?;
    let mut cfg = RunConfig::default();
    cfg.apply_text(&data.config)
        .map_err(|e| Error::config(format!("{}: config snapshot: {e}", path.display())))?;
    let model = GradFormer::<f32>::build(cfg.model.clone())?;
    load_into(&data, &model.parameters())?;
    Ok((model, cfg))
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let (model, cfg) = model_from_checkpoint(&a.ckpt)?;
    let samples: Vec<BitemporalSample<f32>> = load_split(&a.data, &a.split)?;
    let report = evaluate_split(&model, &samples, cfg.train.batch)?;
    let text = report.to_key_values();
    std::fs::write(&a.report, &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_infer(a: InferArgs) -> Result<ExitCode> {
    let (model, _) = model_from_checkpoint(&a.ckpt)?;
    let pre = read_image::<f32>(&a.pre)?;
    let post = read_image::<f32>(&a.post)?;
    if pre.shape() != post.shape() {
        return Err(Error::contract(format!(
            "image sizes differ: {:?} vs {:?}",
            &pre.shape()[1..],
            &post.shape()[1..]
        )));
    }
    let (h, w) = (pre.shape()[1], pre.shape()[2]);
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::contract(format!("image sides must be divisible by 32, got {h}×{w}")));
    }
    let batch_of_one = |t: &Tensor<f32>| {
        Tensor::from_vec(t.to_vec(), &[1, 3, h, w])
    };
    let tape = Tape::no_grad();
    let logits = model.forward(&tape, &batch_of_one(&pre)?, &batch_of_one(&post)?)?;
    let mask = predict(&logits)?;
    write_mask(&a.out, &Tensor::from_vec(mask.to_vec(), &[h, w])?)?;
    if let Some(logits_path) = &a.logits {
        let squeezed = Tensor::from_vec(logits.to_vec(), &[2, h, w])?;
        write_tensor(&logits_path, &squeezed)?;
    }
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    if !(a.tol > 0.0) {
        return Err(Error::config(format!("tol must be positive, got {}", a.tol)));
    }
    let cfg = RunConfig::resolve(&a.config)?;
    let entries = suite_entries(&cfg.model)?;
    let mut all_pass = true;
    for entry in &entries {
        let report = entry.run(a.tol)?;
        println!("{report}");
        all_pass &= report.pass();
    }
    if all_pass {
        println!("gradcheck: all {} checks passed", entries.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradcheck: FAILED");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_params(a: ParamsArgs) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(&a.config)?;
    cfg.model.validate()?;
    let model = GradFormer::<f32>::build(cfg.model)?;
    let (total, groups) = model.count_parameters();
    for (name, count) in &groups {
        println!("{name:<12} {count}");
    }
    println!("total        {total}");
    let total_m = total as f64 / 1e6;
    let deviation = 100.0 * (total_m - REFERENCE_PARAMS_M) / REFERENCE_PARAMS_M;
    println!("reference    {REFERENCE_PARAMS_M:.2}M, this model {total_m:.2}M ({deviation:+.1}%)");
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_path_appends_suffix() {
        assert_eq!(log_path_for(std::path::Path::new("/tmp/m.ckpt")), PathBuf::from("/tmp/m.ckpt.log"));
        assert_eq!(log_path_for(std::path::Path::new("model")), PathBuf::from("model.log"));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
