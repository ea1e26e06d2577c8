use anyhow::{bail, Context, Result};
use clap::Args;
use std::path::PathBuf;

use idseg::data::io::load_split;
use idseg::data::Split;
use idseg::eval::{benchmark_inference, evaluate, render_report, MaskPredictor, OraclePredictor};
use idseg::models::{load_checkpoint, HogSvmModel};

use crate::manifest::{check_outputs, RunManifest};

#[derive(Args)]
pub struct EvalArgs {
    /// Model to evaluate: a .ckpt checkpoint, a hog-svm JSON file, or the
    /// literal `oracle` (predicts the ground truth; harness self-test).
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Split to evaluate.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Label for the Train column of the report.
    #[arg(long, default_value = "synthetic")]
    pub train_label: String,
    /// Also run the latency benchmark.
    #[arg(long, default_value_t = false)]
    pub benchmark: bool,
    /// Timed predictions for the benchmark.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Untimed warmup predictions.
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
}

pub fn run(args: EvalArgs) -> Result<()> {
    let split = Split::parse(&args.split)?;
    let samples = load_split(&args.dataset, split)
        .with_context(|| format!("loading {split} split from {}", args.dataset.display()))?;
    if samples.is_empty() {
        bail!(
            "dataset at {} has no {split} samples",
            args.dataset.display()
        );
    }

    let mut input_size = 0usize;
    let predictor: Box<dyn MaskPredictor> = if args.model == "oracle" {
        Box::new(OraclePredictor::from_samples(&samples))
    } else {
        let path = PathBuf::from(&args.model);
        if !path.is_file() {
            bail!("model file not found: {}", path.display());
        }
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            Box::new(HogSvmModel::load_json(&path)?)
        } else {
            let net = load_checkpoint(&path)?;
            input_size = net.spec().input_size;
            Box::new(net)
        }
    };

    RunManifest::new(
        "eval",
        serde_json::json!({
            "model": args.model,
            "split": split.as_str(),
            "train_label": args.train_label,
            "benchmark": args.benchmark,
            "n": args.n,
            "warmup": args.warmup,
        }),
        serde_json::json!({}),
        vec![args.dataset.clone(), PathBuf::from(&args.model)],
        &args.out,
    )
    .write()?;

    let report = evaluate(predictor.as_ref(), &samples, &args.train_label)?;
    let mut outputs = render_report(&report, &args.out)?;
    if let Some(row) = report.overall() {
        println!(
            "{} on {} ({} images): mIoU {:.4}  std {:.4}  75p {:.4}",
            report.method,
            split.as_str(),
            row.n_images,
            row.miou,
            row.std,
            row.p75
        );
    }

    if args.benchmark {
        let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
        let stats =
            benchmark_inference(predictor.as_ref(), &images, input_size, args.n, args.warmup)?;
        println!(
            "latency over {} images: mean {:.4}s  std {:.4}s",
            stats.n_images, stats.mean_s, stats.std_s
        );
        let timing_path = args.out.join("timing.json");
        std::fs::write(&timing_path, serde_json::to_string_pretty(&stats)?)?;
        outputs.push(timing_path);
    }
    check_outputs(&outputs)?;
    Ok(())
}
