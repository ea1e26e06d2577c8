//! Reproducible training harness: Adam on pixelwise cross-entropy, seeded
//! shuffling, online preprocessing/augmentation, per-epoch validation and
//! best-epoch weight selection.

pub mod adam;
pub mod gradcheck;
pub mod loss;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

use crate::augment::{self, AugPipeline};
use crate::data::{Sample, SegMask};
use crate::error::{Error, Result};
use crate::eval::iou;
use crate::imgproc::{resize_bilinear_chw, resize_bilinear_rgb, resize_nearest_u8, to_chw_norm};
use crate::models::{argmax_mask, read_params, write_params, zero_grads, ModelSpec, SegNet};
use crate::preprocess;
use crate::scalar::to_f64;
use crate::tensor::softmax_channels;

pub use adam::Adam;
pub use gradcheck::{gradient_check, GRADCHECK_MAX_PARAMS};
pub use loss::{crossentropy_grad_logits, pixel_crossentropy, PROB_FLOOR};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessFlags {
    pub background_permuter: bool,
    pub gray_mask: bool,
    pub hsv_jitter: bool,
}

fn default_optimizer() -> String {
    "adam".into()
}

fn default_loss() -> String {
    "categorical-crossentropy".into()
}

fn default_lr() -> f64 {
    1e-4
}

fn default_epochs() -> usize {
    300
}

fn default_batch() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    /// Only "adam" is supported; present in configs for explicitness.
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    /// Only "categorical-crossentropy" is supported.
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "crate::augment::default_pipeline")]
    pub augment: AugPipeline,
    #[serde(default)]
    pub preprocess: PreprocessFlags,
    /// Keep encoder weights fixed (MobileUNet with a pretrained encoder).
    #[serde(default)]
    pub freeze_encoder: bool,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelSpec) -> Self {
        TrainConfig {
            model,
            optimizer: default_optimizer(),
            loss: default_loss(),
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            augment: crate::augment::default_pipeline(),
            preprocess: PreprocessFlags::default(),
            freeze_encoder: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.optimizer != "adam" {
            return Err(Error::Config(format!(
                "unsupported optimizer `{}`",
                self.optimizer
            )));
        }
        if self.loss != "categorical-crossentropy" {
            return Err(Error::Config(format!("unsupported loss `{}`", self.loss)));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            entry: Some(path.display().to_string()),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("serializable config"),
        )
        .map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_miou: f64,
    pub val_loss: f64,
    pub val_miou: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the best validation mIoU.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        w.write_record(["epoch", "train_loss", "train_miou", "val_loss", "val_miou", "wall_secs", "is_best"])
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?;
        for rec in &self.epochs {
            w.write_record([
                rec.epoch.to_string(),
                format!("{:.6}", rec.train_loss),
                format!("{:.6}", rec.train_miou),
                format!("{:.6}", rec.val_loss),
                format!("{:.6}", rec.val_miou),
                format!("{:.3}", rec.wall_secs),
                (rec.epoch == self.best_epoch).to_string(),
            ])
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(23) ^ 0x9e3779b97f4a7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Online preprocessing: each enabled op fires with probability 1/2 per
/// sample per epoch, seeded.
fn apply_preprocess(sample: &Sample, flags: &PreprocessFlags, seed: u64) -> Result<Sample> {
    if flags == &PreprocessFlags::default() {
        return Ok(sample.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x505245)); // "PRE"
    let mut out = sample.clone();
    if flags.background_permuter && rng.random::<bool>() {
        let bg_seed = rng.random::<u64>();
        let bg = crate::data::synth::procedural_background(bg_seed, out.width(), out.height());
        out = preprocess::permute_background(&out, &bg)?;
    }
    if flags.gray_mask && rng.random::<bool>() {
        out = preprocess::gray_mask(&out);
    }
    if flags.hsv_jitter && rng.random::<bool>() {
        let jitter_seed = rng.random::<u64>();
        out = preprocess::hsv_jitter(&out, jitter_seed);
    }
    Ok(out)
}

/// Prepares one network input/target pair at the training resolution.
fn to_training_pair(sample: &Sample, side: usize) -> (crate::tensor::Fmap<f32>, SegMask) {
    // resize the image first (u8 bilinear), then normalize
    let img = resize_bilinear_rgb(&sample.image, side, side);
    let x = to_chw_norm::<f32>(&img);
    let y = SegMask::from_nonzero(resize_nearest_u8(sample.mask.labels(), side, side));
    (x, y)
}

/// Validation pass: loss and IoU at network resolution plus IoU at native
/// resolution (the reported val mIoU, identical to `predict_mask`).
fn validate(net: &dyn SegNet<f32>, val: &[Sample]) -> Result<(f64, f64)> {
    let side = net.spec().input_size;
    let mut loss_sum = 0.0;
    let mut iou_sum = 0.0;
    for s in val {
        let x = resize_bilinear_chw(&to_chw_norm::<f32>(&s.image), side, side);
        let logits = net.forward_logits(&x);
        let probs = softmax_channels(&logits);
        let y_small = SegMask::from_nonzero(resize_nearest_u8(s.mask.labels(), side, side));
        loss_sum += to_f64(pixel_crossentropy(&probs, &y_small)?);
        let small = argmax_mask(&logits);
        let native = SegMask::from_nonzero(resize_nearest_u8(&small, s.width(), s.height()));
        iou_sum += iou(&s.mask, &native)?;
    }
    let n = val.len() as f64;
    Ok((loss_sum / n, iou_sum / n))
}

/// Trains `net` and returns the history; the network is left holding the
/// weights of the best-validation epoch.
pub fn train(
    net: &mut dyn SegNet<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Training("empty training split".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Training("empty validation split".into()));
    }
    let side = net.spec().input_size;
    let n = train_set.len();
    let mut adam = Adam::<f32>::new(cfg.learning_rate);
    let mut history = TrainHistory::default();
    let mut best_miou = f64::NEG_INFINITY;
    let mut best_params: Vec<f32> = Vec::new();
    let frozen_prefix = if cfg.freeze_encoder {
        net.encoder_params()
    } else {
        0
    };

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0xE000 + epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut iou_sum = 0.0f64;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            zero_grads(net);
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let sample_seed = mix(cfg.seed, ((epoch as u64) << 32) | i as u64);
                let s = apply_preprocess(&train_set[i], &cfg.preprocess, sample_seed)?;
                let s = augment::apply(&cfg.augment, &s, sample_seed)?;
                let (x, y) = to_training_pair(&s, side);
                let logits = net.forward_train(&x);
                let probs = softmax_channels(&logits);
                let l = to_f64(pixel_crossentropy(&probs, &y)?);
                batch_loss += l;
                iou_sum += iou(&y, &SegMask::from_nonzero(argmax_mask(&logits)))?;
                let dlogits = crossentropy_grad_logits(&probs, &y);
                net.backward(&dlogits);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx} (lr = {}); \
                     consider lowering the learning rate",
                    cfg.learning_rate
                )));
            }
            loss_sum += batch_loss;
            if frozen_prefix > 0 {
                zero_prefix_grads(net, frozen_prefix);
            }
            adam.step(net, 1.0 / batch.len() as f32);
        }
        let (val_loss, val_miou) = validate(net, val_set)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_miou: iou_sum / n as f64,
            val_loss,
            val_miou,
            wall_secs: t0.elapsed().as_secs_f64(),
        };
        if val_miou > best_miou {
            best_miou = val_miou;
            history.best_epoch = epoch;
            best_params = read_params(net);
        }
        if let Some(cb) = progress.as_deref_mut() {
            cb(&rec);
        }
        history.epochs.push(rec);
    }
    if !best_params.is_empty() {
        write_params(net, &best_params);
    }
    Ok(history)
}

fn zero_prefix_grads(net: &mut dyn SegNet<f32>, prefix: usize) {
    let mut off = 0usize;
    net.visit_params(&mut |_, g| {
        if off < prefix {
            let k = (prefix - off).min(g.len());
            for v in g[..k].iter_mut() {
                *v = 0.0;
            }
        }
        off += g.len();
    });
}
