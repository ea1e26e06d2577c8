//! Polygon rasterization bridging annotations to pixel masks.
//!
//! A pixel belongs to the card iff its center `(x+0.5, y+0.5)` lies inside
//! the closed polygon under the even-odd rule. The scanline fill below is
//! arithmetic-identical to the per-pixel ray cast, so it can be checked
//! against a brute-force oracle exactly. Vertices may lie outside the canvas;
//! only in-canvas pixels are produced.

use crate::data::{PolygonAnnotation, SegMask};

#[derive(Debug, Clone)]
pub struct RasterOutcome {
    pub mask: SegMask,
    /// Set when the polygon covered no pixel center (zero area on canvas).
    pub empty: bool,
}

/// Rasterizes a polygon onto a `width`×`height` canvas.
pub fn rasterize_polygon(poly: &PolygonAnnotation, width: usize, height: usize) -> RasterOutcome {
    assert!(width >= 1 && height >= 1, "canvas must be at least 1×1");
    let mut mask = SegMask::zeros(height, width);
    let pts = &poly.points;
    let n = pts.len();
    let mut crossings: Vec<f64> = Vec::with_capacity(n);
    let mut any = false;
    for py in 0..height {
        let yc = py as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (x1, y1) = pts[i];
            let (x2, y2) = pts[(i + 1) % n];
            if (y1 > yc) != (y2 > yc) {
                crossings.push(x1 + (yc - y1) * (x2 - x1) / (y2 - y1));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let row = mask.labels_mut();
        for pair in crossings.chunks_exact(2) {
            let (a, b) = (pair[0], pair[1]);
            // centers xc with a <= xc < b, xc = px + 0.5
            let px_lo = (a - 0.5).ceil().max(0.0) as usize;
            let mut px_hi = (b - 0.5).ceil(); // exclusive
            if px_hi > width as f64 {
                px_hi = width as f64;
            }
            let px_hi = px_hi.max(0.0) as usize;
            for px in px_lo..px_hi {
                row[(py, px)] = 1;
                any = true;
            }
        }
    }
    RasterOutcome { mask, empty: !any }
}
