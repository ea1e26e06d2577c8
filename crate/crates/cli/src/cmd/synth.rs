use anyhow::{bail, Context, Result};
use clap::Args;
use std::path::PathBuf;

use idseg::data::io::DatasetWriter;
use idseg::data::{generate_synthetic_sample, split_dataset, GeneratorConfig, SampleMeta};

use crate::manifest::{check_outputs, RunManifest};

#[derive(Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples.
    #[arg(long)]
    pub count: usize,
    /// Master seed; sample i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generator config (JSON); defaults to the built-in procedural setup.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Canvas width when no config file is given.
    #[arg(long, default_value_t = 1280)]
    pub width: usize,
    /// Canvas height when no config file is given.
    #[arg(long, default_value_t = 720)]
    pub height: usize,
    /// train/val/test fractions.
    #[arg(long, num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
    pub ratios: Vec<f64>,
}

pub fn run(args: SynthArgs) -> Result<()> {
    if args.count == 0 {
        bail!("count must be >= 1");
    }
    let cfg: GeneratorConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => GeneratorConfig {
            width: args.width,
            height: args.height,
            template_width: (args.width.min(args.height) as f64 * 0.6) as usize,
            ..GeneratorConfig::default()
        },
    };
    cfg.validate().context("invalid generator config")?;

    RunManifest::new(
        "synth",
        serde_json::to_value(&cfg)?,
        serde_json::json!({ "seed": args.seed, "count": args.count, "ratios": args.ratios }),
        args.config.iter().cloned().collect(),
        &args.out,
    )
    .write()?;

    // generate, then assign stratified splits over the realized metadata
    let mut samples = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let sample = generate_synthetic_sample(&cfg, args.seed.wrapping_add(i as u64))
            .with_context(|| format!("generating sample {i}"))?;
        samples.push(sample);
    }
    let metas: Vec<SampleMeta> = samples.iter().map(|s| s.meta.clone()).collect();
    let ratios = (args.ratios[0], args.ratios[1], args.ratios[2]);
    match split_dataset(&metas, ratios, args.seed) {
        Ok(assignment) => {
            for s in &mut samples {
                s.meta.split = assignment
                    .split_of(&s.meta.source_id)
                    .expect("every sample assigned");
            }
        }
        Err(idseg::Error::StratumTooSmall { .. }) => {
            eprintln!("warning: strata too small for a stratified split; keeping all samples in train");
        }
        Err(e) => return Err(e.into()),
    }

    let mut writer = DatasetWriter::create(&args.out)?;
    for s in &samples {
        writer.add(s)?;
    }
    let meta_csv = writer.finish()?;
    check_outputs(&[meta_csv, args.out.join("manifest.json")])?;
    println!("wrote {} samples to {}", args.count, args.out.display());
    Ok(())
}
