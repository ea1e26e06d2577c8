//! Histogram-of-oriented-gradients descriptor (Dalal–Triggs style): unsigned
//! gradients, per-cell orientation histograms with linear bin interpolation,
//! block-wise L2-hysteresis normalization over sliding blocks.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogParams {
    /// Descriptor window (width, height) in pixels.
    pub window: (usize, usize),
    /// Cell side in pixels; the window must divide into whole cells.
    pub cell: usize,
    /// Block side in cells.
    pub block: usize,
    /// Block stride in cells.
    pub block_stride: usize,
    /// Unsigned orientation bins over [0°, 180°).
    pub bins: usize,
    /// Image pyramid scales for the sliding-window scan.
    pub scales: Vec<f64>,
    /// Window stride in pixels (at scan scale).
    pub window_stride: usize,
}

impl Default for HogParams {
    fn default() -> Self {
        // window aspect ≈ the 1.585 card aspect
        HogParams {
            window: (152, 96),
            cell: 8,
            block: 2,
            block_stride: 1,
            bins: 9,
            scales: vec![0.3, 0.38, 0.48, 0.6, 0.75, 0.95, 1.2],
            window_stride: 8,
        }
    }
}

impl HogParams {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config("hog needs at least 2 orientation bins".into()));
        }
        if self.cell == 0 || self.window.0 % self.cell != 0 || self.window.1 % self.cell != 0 {
            return Err(Error::Config(format!(
                "window {:?} not divisible by cell {}",
                self.window, self.cell
            )));
        }
        let cx = self.window.0 / self.cell;
        let cy = self.window.1 / self.cell;
        if self.block == 0 || self.block > cx.min(cy) || self.block_stride == 0 {
            return Err(Error::Config("invalid block geometry".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> (usize, usize) {
        (self.window.0 / self.cell, self.window.1 / self.cell)
    }

    pub fn blocks(&self) -> (usize, usize) {
        let (cx, cy) = self.cells();
        (
            (cx - self.block) / self.block_stride + 1,
            (cy - self.block) / self.block_stride + 1,
        )
    }
}

/// Closed-form descriptor length: `blocks_x · blocks_y · block² · bins`.
pub fn hog_descriptor_len(params: &HogParams) -> usize {
    let (bx, by) = params.blocks();
    bx * by * params.block * params.block * params.bins
}

/// Per-cell orientation histograms of a grayscale plane:
/// `(cells_y, cells_x, bins)`. Gradients use clamped central differences;
/// magnitude votes split linearly between the two nearest unsigned bins.
pub fn cell_histograms(gray: &Array2<f32>, cell: usize, bins: usize) -> Array3<f32> {
    let (h, w) = gray.dim();
    let (cy, cx) = (h / cell, w / cell);
    let mut hist = Array3::<f32>::zeros((cy, cx, bins));
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    for y in 0..cy * cell {
        for x in 0..cx * cell {
            let gx = gray[(y, clamp(x as isize + 1, w))] - gray[(y, clamp(x as isize - 1, w))];
            let gy = gray[(clamp(y as isize + 1, h), x)] - gray[(clamp(y as isize - 1, h), x)];
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            // unsigned orientation in [0, 180)
            let theta = (gy as f64).atan2(gx as f64).to_degrees().rem_euclid(180.0);
            let pos = theta / 180.0 * bins as f64 - 0.5;
            let b0 = pos.floor();
            let t = (pos - b0) as f32;
            let i0 = (b0.rem_euclid(bins as f64)) as usize;
            let i1 = (i0 + 1) % bins;
            let (celly, cellx) = (y / cell, x / cell);
            hist[(celly, cellx, i0)] += mag * (1.0 - t);
            hist[(celly, cellx, i1)] += mag * t;
        }
    }
    hist
}

/// Assembles the block-normalized descriptor from precomputed cell
/// histograms, starting at cell offset `(cell_x0, cell_y0)`.
pub fn descriptor_from_cells(
    cells: &Array3<f32>,
    params: &HogParams,
    cell_x0: usize,
    cell_y0: usize,
) -> Vec<f32> {
    let (bx, by) = params.blocks();
    let mut out = Vec::with_capacity(hog_descriptor_len(params));
    for block_y in 0..by {
        for block_x in 0..bx {
            let start = out.len();
            for dy in 0..params.block {
                for dx in 0..params.block {
                    let cyi = cell_y0 + block_y * params.block_stride + dy;
                    let cxi = cell_x0 + block_x * params.block_stride + dx;
                    for b in 0..params.bins {
                        out.push(cells[(cyi, cxi, b)]);
                    }
                }
            }
            l2_hys(&mut out[start..]);
        }
    }
    out
}

/// L2 normalize, clip at 0.2, renormalize.
fn l2_hys(v: &mut [f32]) {
    const EPS: f32 = 1e-6;
    let norm = (v.iter().map(|x| x * x).sum::<f32>() + EPS * EPS).sqrt();
    for x in v.iter_mut() {
        *x = (*x / norm).min(0.2);
    }
    let norm = (v.iter().map(|x| x * x).sum::<f32>() + EPS * EPS).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Full descriptor of one window-sized grayscale patch.
pub fn hog_descriptor(patch: &Array2<f32>, params: &HogParams) -> Result<Vec<f32>> {
    params.validate()?;
    let (h, w) = patch.dim();
    if (w, h) != params.window {
        return Err(Error::ShapeMismatch(format!(
            "patch {w}×{h} does not match descriptor window {:?}",
            params.window
        )));
    }
    let cells = cell_histograms(patch, params.cell, params.bins);
    Ok(descriptor_from_cells(&cells, params, 0, 0))
}
