//! IoU metric, per-subset statistics, report rendering and the
//! inference-latency benchmark.

pub mod report;
pub mod timing;

use serde::{Deserialize, Serialize};

use crate::data::{CaptureSource, CountryCard, Sample, SegMask};
use crate::error::{Error, Result};
use crate::imgproc::Rgb8;
use crate::scalar::{r, Real};

pub use report::render_report;
pub use timing::{benchmark_inference, TimingStats};

/// Anything that can turn an image into a card mask (network, sliding-window
/// baseline, or the ground-truth oracle used for harness self-tests).
pub trait MaskPredictor {
    fn predict(&self, image: &Rgb8) -> SegMask;
    fn model_id(&self) -> String;
}

/// Intersection over union of the card class.
///
/// Defined as `|A∩B| / |A∪B|`; two empty masks score 1.0 (nothing to find,
/// nothing found).
pub fn iou(a: &SegMask, b: &SegMask) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "iou: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.labels().iter().zip(b.labels().iter()) {
        let (x, y) = (x == 1, y == 1);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Linear-interpolation percentile on sorted scores (index `p/100·(n−1)`).
pub fn percentile<R: Real>(scores: &[R], p: f64) -> Result<R> {
    if scores.is_empty() {
        return Err(Error::Eval("percentile of an empty list".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Eval(format!("percentile {p} outside [0,100]")));
    }
    let mut sorted: Vec<R> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = q.floor() as usize;
    let hi = q.ceil() as usize;
    let t = r::<R>(q - lo as f64);
    Ok(sorted[lo] + t * (sorted[hi] - sorted[lo]))
}

pub fn mean<R: Real>(xs: &[R]) -> R {
    if xs.is_empty() {
        return R::zero();
    }
    let mut s = R::zero();
    for &x in xs {
        s = s + x;
    }
    s / r::<R>(xs.len() as f64)
}

/// Population standard deviation.
pub fn std_pop<R: Real>(xs: &[R]) -> R {
    if xs.is_empty() {
        return R::zero();
    }
    let m = mean(xs);
    let mut s = R::zero();
    for &x in xs {
        s = s + (x - m) * (x - m);
    }
    (s / r::<R>(xs.len() as f64)).sqrt()
}

pub const HISTOGRAM_BINS: usize = 50;

/// Histogram of scores in [0,1] over 50 uniform bins (1.0 lands in the last).
pub fn iou_histogram(scores: &[f64]) -> [u32; HISTOGRAM_BINS] {
    let mut bins = [0u32; HISTOGRAM_BINS];
    for &s in scores {
        let idx = ((s * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[idx] += 1;
    }
    bins
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub source_id: String,
    pub iou: f64,
    pub country_card: CountryCard,
    pub capture_source: CaptureSource,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsetRow {
    pub test_label: String,
    pub n_images: usize,
    pub miou: f64,
    pub std: f64,
    pub p75: f64,
    pub histogram: Vec<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    /// Method column (model id).
    pub method: String,
    /// Train column (label of the training set the model came from).
    pub train_label: String,
    pub rows: Vec<SubsetRow>,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn overall(&self) -> Option<&SubsetRow> {
        self.rows.iter().find(|row| row.test_label == "ALL")
    }
}

fn subset_row(label: &str, scores: &[f64]) -> SubsetRow {
    SubsetRow {
        test_label: label.to_string(),
        n_images: scores.len(),
        miou: mean(scores),
        std: std_pop(scores),
        p75: percentile(scores, 75.0).expect("non-empty subset"),
        histogram: iou_histogram(scores).to_vec(),
    }
}

/// Predicts every sample at native resolution and aggregates IoU per card
/// type plus an `ALL` row.
pub fn evaluate(
    pred: &dyn MaskPredictor,
    samples: &[Sample],
    train_label: &str,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Eval("evaluate needs at least one sample".into()));
    }
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let predicted = pred.predict(&s.image);
        let score = iou(&s.mask, &predicted).map_err(|e| {
            Error::Eval(format!("sample `{}`: {e}", s.meta.source_id))
        })?;
        records.push(EvalRecord {
            source_id: s.meta.source_id.clone(),
            iou: score,
            country_card: s.meta.country_card,
            capture_source: s.meta.capture_source,
        });
    }
    let mut rows = Vec::new();
    for card in CountryCard::ALL {
        let scores: Vec<f64> = records
            .iter()
            .filter(|r| r.country_card == card)
            .map(|r| r.iou)
            .collect();
        if !scores.is_empty() {
            rows.push(subset_row(card.as_str(), &scores));
        }
    }
    let all: Vec<f64> = records.iter().map(|r| r.iou).collect();
    rows.push(subset_row("ALL", &all));
    Ok(EvalReport {
        method: pred.model_id(),
        train_label: train_label.to_string(),
        rows,
        records,
    })
}

/// Ground-truth oracle predictor for harness self-tests.
pub struct OraclePredictor {
    pub masks: std::collections::HashMap<u64, SegMask>,
}

impl OraclePredictor {
    /// Keys masks by a cheap image fingerprint so lookups need no ids.
    pub fn from_samples(samples: &[Sample]) -> Self {
        let mut masks = std::collections::HashMap::new();
        for s in samples {
            masks.insert(fingerprint(&s.image), s.mask.clone());
        }
        OraclePredictor { masks }
    }
}

pub fn fingerprint(image: &Rgb8) -> u64 {
    // FNV-1a over the raw bytes
    let mut h = 0xcbf29ce484222325u64;
    for &b in image.iter() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl MaskPredictor for OraclePredictor {
    fn predict(&self, image: &Rgb8) -> SegMask {
        let (h, w, _) = image.dim();
        self.masks
            .get(&fingerprint(image))
            .cloned()
            .unwrap_or_else(|| SegMask::zeros(h, w))
    }

    fn model_id(&self) -> String {
        "oracle".into()
    }
}
