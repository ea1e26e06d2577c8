//! Pixelwise categorical cross-entropy.

use crate::data::SegMask;
use crate::error::{Error, Result};
use crate::scalar::{r, Real};
use crate::tensor::Fmap;

/// Probability floor applied before the log.
pub const PROB_FLOOR: f64 = 1e-7;

/// Mean over pixels of `−log p(target class)`, with the probability floored
/// at 1e-7.
pub fn pixel_crossentropy<R: Real>(probs: &Fmap<R>, target: &SegMask) -> Result<R> {
    let (c, h, w) = probs.dim();
    if target.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "probs are {h}×{w} but target is {:?}",
            target.dim()
        )));
    }
    let floor = r::<R>(PROB_FLOOR);
    let n = h * w;
    let ps = probs.as_slice().expect("contiguous probs");
    let ts = target.labels().as_slice().expect("contiguous target");
    let mut sum = R::zero();
    for i in 0..n {
        let t = ts[i] as usize;
        if t >= c {
            return Err(Error::ShapeMismatch(format!(
                "target label {t} out of range for {c} classes"
            )));
        }
        sum = sum - ps[t * n + i].max(floor).ln();
    }
    Ok(sum / r::<R>(n as f64))
}

/// Gradient of [`pixel_crossentropy`] with respect to the logits:
/// `(p − onehot(target)) / (H·W)`.
pub fn crossentropy_grad_logits<R: Real>(probs: &Fmap<R>, target: &SegMask) -> Fmap<R> {
    let (_, h, w) = probs.dim();
    let n = h * w;
    let inv_n = r::<R>(1.0 / n as f64);
    let mut d = probs.clone();
    let ds = d.as_slice_mut().unwrap();
    let ts = target.labels().as_slice().expect("contiguous target");
    for (i, &t) in ts.iter().enumerate() {
        let at = t as usize * n + i;
        ds[at] = ds[at] - R::one();
    }
    d.mapv_inplace(|v| v * inv_n);
    d
}
