use anyhow::{bail, Context, Result};
use clap::Args;
use std::path::PathBuf;

use idseg::augment::AugPipeline;
use idseg::data::io::load_split;
use idseg::data::Split;
use idseg::models::{
    build_net, count_parameters, save_checkpoint, train_hog_svm, Arch, HogParams, ModelSpec,
    PRETRAINED_ENCODER_ENV,
};
use idseg::train::{train, EpochRecord, TrainConfig};

use crate::manifest::{check_outputs, RunManifest};

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (needs train and val splits).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for checkpoint, history and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Training config (JSON); flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// mobileunet | densenet10 | hog-svm
    #[arg(long)]
    pub arch: Option<String>,
    /// DenseNet10 growth rate.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable augmentation for this run.
    #[arg(long, default_value_t = false)]
    pub no_augment: bool,
    /// MobileUNet: initialize the encoder from this checkpoint
    /// (or set IDSEG_MOBILENETV2_WEIGHTS). Without it the encoder is random.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Keep the (pretrained) encoder frozen.
    #[arg(long, default_value_t = false)]
    pub freeze_encoder: bool,
    /// Online preprocessing flags, comma separated
    /// (background-permuter, gray-mask, hsv-jitter).
    #[arg(long, value_delimiter = ',')]
    pub preprocess: Vec<String>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let arch_name = args.arch.clone().unwrap_or_else(|| "mobileunet".into());
    if arch_name == "hog-svm" {
        return run_hog(args);
    }
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load_json(path)?,
        None => {
            let spec = match arch_name.as_str() {
                "mobileunet" => ModelSpec::mobileunet(args.input_size.unwrap_or(224)),
                "densenet10" => {
                    ModelSpec::densenet10(args.input_size.unwrap_or(224), args.k.unwrap_or(5))
                }
                "tiny" => ModelSpec::tiny(args.input_size.unwrap_or(32)),
                other => bail!("unknown arch `{other}`"),
            };
            TrainConfig::new(spec)
        }
    };
    if let Some(arch) = &args.arch {
        cfg.model.arch = match arch.as_str() {
            "mobileunet" => Arch::MobileUNet,
            "densenet10" => Arch::DenseNet10,
            "tiny" => Arch::Tiny,
            other => bail!("unknown arch `{other}`"),
        };
    }
    if let Some(k) = args.k {
        cfg.model.growth_rate = k;
    }
    if let Some(s) = args.input_size {
        cfg.model.input_size = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_augment {
        cfg.augment = AugPipeline::disabled();
    }
    cfg.freeze_encoder |= args.freeze_encoder;
    for op in &args.preprocess {
        match op.as_str() {
            "background-permuter" => cfg.preprocess.background_permuter = true,
            "gray-mask" => cfg.preprocess.gray_mask = true,
            "hsv-jitter" => cfg.preprocess.hsv_jitter = true,
            other => bail!("unknown preprocessing flag `{other}`"),
        }
    }
    if let Some(path) = &args.pretrained {
        std::env::set_var(PRETRAINED_ENCODER_ENV, path);
        cfg.model.pretrained_encoder = true;
    } else if std::env::var_os(PRETRAINED_ENCODER_ENV).is_none() {
        // no checkpoint anywhere: fall back to random initialization
        cfg.model.pretrained_encoder = false;
    }
    cfg.validate()?;

    let train_set = load_split(&args.dataset, Split::Train)
        .with_context(|| format!("loading train split from {}", args.dataset.display()))?;
    let val_set = load_split(&args.dataset, Split::Val)?;
    if train_set.is_empty() {
        bail!("dataset at {} has no train split", args.dataset.display());
    }
    if val_set.is_empty() {
        bail!("dataset at {} has no val split", args.dataset.display());
    }

    RunManifest::new(
        "train",
        serde_json::to_value(&cfg)?,
        serde_json::json!({ "seed": cfg.seed }),
        vec![args.dataset.clone()],
        &args.out,
    )
    .write()?;

    let mut net = build_net(&cfg.model, cfg.seed)?;
    println!(
        "training {} ({} parameters) on {} train / {} val samples",
        cfg.model.arch,
        count_parameters(net.as_ref()),
        train_set.len(),
        val_set.len()
    );
    let history = train(
        net.as_mut(),
        &train_set,
        &val_set,
        &cfg,
        Some(&mut |rec: &EpochRecord| {
            println!(
                "epoch {:4}  loss {:.4}  train mIoU {:.4}  val loss {:.4}  val mIoU {:.4}  ({:.1}s)",
                rec.epoch, rec.train_loss, rec.train_miou, rec.val_loss, rec.val_miou, rec.wall_secs
            );
        }),
    )?;

    let ckpt_path = args.out.join("model.ckpt");
    save_checkpoint(net.as_mut(), &ckpt_path)?;
    let history_path = args.out.join("history.csv");
    history.write_csv(&history_path)?;
    check_outputs(&[ckpt_path, history_path])?;
    if let Some(best) = history.best() {
        println!(
            "best epoch {} with val mIoU {:.4}; checkpoint holds those weights",
            best.epoch, best.val_miou
        );
    }
    Ok(())
}

fn run_hog(args: TrainArgs) -> Result<()> {
    let train_set = load_split(&args.dataset, Split::Train)?;
    if train_set.is_empty() {
        bail!("dataset at {} has no train split", args.dataset.display());
    }
    let params = HogParams::default();
    let seed = args.seed.unwrap_or(0);
    RunManifest::new(
        "train",
        serde_json::json!({ "arch": "hog-svm", "hog": params }),
        serde_json::json!({ "seed": seed }),
        vec![args.dataset.clone()],
        &args.out,
    )
    .write()?;
    let model = train_hog_svm(&train_set, params, seed)?;
    println!(
        "hog-svm trained on {} samples; training accuracy {:.4}",
        train_set.len(),
        model.train_accuracy
    );
    let path = args.out.join("hog-svm.json");
    model.save_json(&path)?;
    check_outputs(&[path])?;
    Ok(())
}
