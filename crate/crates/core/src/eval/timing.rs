//! Inference-latency benchmark.
//!
//! Times end-to-end single-image prediction (resize + forward + argmax) with
//! wall-clock timestamps after a warmup phase. The prediction path runs on
//! the calling thread only, so the numbers reflect single-stream latency.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::eval::{mean, std_pop, MaskPredictor};
use crate::imgproc::Rgb8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingStats {
    pub model_id: String,
    pub input_size: usize,
    pub n_images: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub per_image_s: Vec<f64>,
}

/// Runs `warmup` untimed predictions, then times `n` single-image
/// predictions. Images are cycled with replacement when fewer than `n` are
/// supplied.
pub fn benchmark_inference(
    pred: &dyn MaskPredictor,
    images: &[Rgb8],
    input_size: usize,
    n: usize,
    warmup: usize,
) -> Result<TimingStats> {
    if images.is_empty() {
        return Err(Error::Eval("benchmark needs at least one image".into()));
    }
    if n == 0 {
        return Err(Error::Eval("benchmark needs n >= 1".into()));
    }
    for i in 0..warmup {
        let img = &images[i % images.len()];
        std::hint::black_box(pred.predict(img));
    }
    let mut per_image_s = Vec::with_capacity(n);
    for i in 0..n {
        let img = &images[i % images.len()];
        let t0 = Instant::now();
        std::hint::black_box(pred.predict(img));
        per_image_s.push(t0.elapsed().as_secs_f64());
    }
    Ok(TimingStats {
        model_id: pred.model_id(),
        input_size,
        n_images: n,
        mean_s: mean(&per_image_s),
        std_s: std_pop(&per_image_s),
        per_image_s,
    })
}
