use anyhow::{bail, Context, Result};
use clap::Args;
use std::path::PathBuf;

use idseg::data::io::{load_sample, read_meta, DatasetWriter};
use idseg::data::synth::procedural_background;
use idseg::preprocess::{gray_mask, hsv_jitter, permute_background};

use crate::manifest::{check_outputs, RunManifest};

#[derive(Args)]
pub struct PreprocessArgs {
    /// Source dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output dataset directory (originals plus preprocessed variants).
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated ops: background-permuter, gray-mask, hsv-jitter.
    #[arg(long, value_delimiter = ',', default_value = "background-permuter,gray-mask,hsv-jitter")]
    pub ops: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip copying the original samples into the output.
    #[arg(long, default_value_t = false)]
    pub no_originals: bool,
}

pub fn run(args: PreprocessArgs) -> Result<()> {
    for op in &args.ops {
        if !["background-permuter", "gray-mask", "hsv-jitter"].contains(&op.as_str()) {
            bail!("unknown preprocessing op `{op}`");
        }
    }
    let metas = read_meta(&args.dataset)
        .with_context(|| format!("reading dataset at {}", args.dataset.display()))?;
    if metas.is_empty() {
        bail!("dataset is empty");
    }

    RunManifest::new(
        "preprocess",
        serde_json::json!({ "dataset": args.dataset, "ops": args.ops, "no_originals": args.no_originals }),
        serde_json::json!({ "seed": args.seed }),
        vec![args.dataset.clone()],
        &args.out,
    )
    .write()?;

    let mut writer = DatasetWriter::create(&args.out)?;
    let mut written = 0usize;
    for (idx, meta) in metas.iter().enumerate() {
        let sample = load_sample(&args.dataset, meta)?;
        if !args.no_originals {
            writer.add(&sample)?;
            written += 1;
        }
        let base_seed = args.seed.wrapping_add(idx as u64).wrapping_mul(0x9e3779b97f4a7c15);
        for op in &args.ops {
            let mut variant = match op.as_str() {
                "background-permuter" => {
                    let bg = procedural_background(base_seed, sample.width(), sample.height());
                    permute_background(&sample, &bg)?
                }
                "gray-mask" => gray_mask(&sample),
                "hsv-jitter" => hsv_jitter(&sample, base_seed ^ 0x45),
                _ => unreachable!(),
            };
            variant.meta.source_id = format!("{}-{}", sample.meta.source_id, op);
            writer.add(&variant)?;
            written += 1;
        }
    }
    let meta_csv = writer.finish()?;
    check_outputs(&[meta_csv])?;
    println!("wrote {written} samples to {}", args.out.display());
    Ok(())
}
