//! 8-bit image utilities shared across the pipeline: colour conversions,
//! resampling, small convolutions and PNG IO.
//!
//! Images are `(H, W, 3)` `u8` arrays, masks `(H, W)` `u8` arrays. Resampling
//! follows the half-pixel-center convention (`src = (dst + 0.5)·scale − 0.5`).

use ndarray::{Array2, Array3};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{r, Real};
use crate::tensor::Fmap;

/// Interleaved 8-bit RGB image, `(H, W, 3)`.
pub type Rgb8 = Array3<u8>;

/// ITU-R BT.601 luma of one RGB pixel, rounded to the nearest integer.
#[inline]
pub fn luma_bt601(px: [u8; 3]) -> u8 {
    let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
    y.round().clamp(0.0, 255.0) as u8
}

/// RGB in [0,255] to HSV with hue in degrees `[0, 360)`, `s`/`v` in `[0, 1]`.
pub fn rgb_to_hsv(px: [u8; 3]) -> (f64, f64, f64) {
    let rf = px[0] as f64 / 255.0;
    let gf = px[1] as f64 / 255.0;
    let bf = px[2] as f64 / 255.0;
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == rf {
        60.0 * (((gf - bf) / delta).rem_euclid(6.0))
    } else if max == gf {
        60.0 * ((bf - rf) / delta + 2.0)
    } else {
        60.0 * ((rf - gf) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h.rem_euclid(360.0), s, max)
}

/// Inverse of [`rgb_to_hsv`], rounding back to 8-bit channels.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (rf, gf, bf) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to8 = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [to8(rf), to8(gf), to8(bf)]
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

#[inline]
fn src_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

/// Bilinear resize of an interleaved RGB image.
pub fn resize_bilinear_rgb(img: &Rgb8, out_w: usize, out_h: usize) -> Rgb8 {
    let (h, w, _) = img.dim();
    let mut out = Array3::<u8>::zeros((out_h, out_w, 3));
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    for oy in 0..out_h {
        let fy = src_coord(oy, sy).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = src_coord(ox, sx).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let v00 = img[(y0, x0, c)] as f64;
                let v01 = img[(y0, x1, c)] as f64;
                let v10 = img[(y1, x0, c)] as f64;
                let v11 = img[(y1, x1, c)] as f64;
                let v = v00 * (1.0 - wy) * (1.0 - wx)
                    + v01 * (1.0 - wy) * wx
                    + v10 * wy * (1.0 - wx)
                    + v11 * wy * wx;
                out[(oy, ox, c)] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Nearest-neighbour resize for label maps.
pub fn resize_nearest_u8(map: &Array2<u8>, out_w: usize, out_h: usize) -> Array2<u8> {
    let (h, w) = map.dim();
    let mut out = Array2::<u8>::zeros((out_h, out_w));
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    for oy in 0..out_h {
        let iy = (src_coord(oy, sy).round().max(0.0) as usize).min(h - 1);
        for ox in 0..out_w {
            let ix = (src_coord(ox, sx).round().max(0.0) as usize).min(w - 1);
            out[(oy, ox)] = map[(iy, ix)];
        }
    }
    out
}

/// Bilinear resize of a CHW float map (used for network input).
pub fn resize_bilinear_chw<R: Real>(x: &Fmap<R>, out_w: usize, out_h: usize) -> Fmap<R> {
    let (c, h, w) = x.dim();
    let mut out = Array3::<R>::zeros((c, out_h, out_w));
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    for oy in 0..out_h {
        let fy = src_coord(oy, sy).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = src_coord(ox, sx).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let (w00, w01) = ((1.0 - wy) * (1.0 - wx), (1.0 - wy) * wx);
            let (w10, w11) = (wy * (1.0 - wx), wy * wx);
            for ci in 0..c {
                let v = r::<R>(w00) * x[(ci, y0, x0)]
                    + r::<R>(w01) * x[(ci, y0, x1)]
                    + r::<R>(w10) * x[(ci, y1, x0)]
                    + r::<R>(w11) * x[(ci, y1, x1)];
                out[(ci, oy, ox)] = v;
            }
        }
    }
    out
}

/// Interleaved u8 image to CHW floats scaled to `[-1, 1]`.
pub fn to_chw_norm<R: Real>(img: &Rgb8) -> Fmap<R> {
    let (h, w, _) = img.dim();
    let mut out = Array3::<R>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[(c, y, x)] = r::<R>(img[(y, x, c)] as f64 / 127.5 - 1.0);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Small convolutions on float planes
// ---------------------------------------------------------------------------

/// Separable Gaussian blur with replicate borders; kernel radius `ceil(3σ)`.
pub fn gaussian_blur_plane(plane: &Array2<f32>, sigma: f64) -> Array2<f32> {
    if sigma <= 0.0 {
        return plane.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0f64;
    for i in -radius..=radius {
        let v = (-(i * i) as f64 / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    let kernel: Vec<f32> = kernel.into_iter().map(|v| (v / sum) as f32).collect();
    let (h, w) = plane.dim();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (ki, kv) in kernel.iter().enumerate() {
                let sxi = clamp(x as isize + ki as isize - radius, w);
                acc += kv * plane[(y, sxi)];
            }
            tmp[(y, x)] = acc;
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (ki, kv) in kernel.iter().enumerate() {
                let syi = clamp(y as isize + ki as isize - radius, h);
                acc += kv * tmp[(syi, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// 3×3 convolution of one channel with replicate borders, f32 accumulation.
pub fn conv3x3_plane(plane: &Array2<f32>, k: &[[f32; 3]; 3]) -> Array2<f32> {
    let (h, w) = plane.dim();
    let mut out = Array2::<f32>::zeros((h, w));
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let sy = clamp(y as isize + ky as isize - 1, h);
                    let sx = clamp(x as isize + kx as isize - 1, w);
                    acc += k[ky][kx] * plane[(sy, sx)];
                }
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// One channel of an RGB image as an f32 plane.
pub fn channel_plane(img: &Rgb8, c: usize) -> Array2<f32> {
    let (h, w, _) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| img[(y, x, c)] as f32)
}

// ---------------------------------------------------------------------------
// PNG IO
// ---------------------------------------------------------------------------

pub fn load_rgb8(path: &Path) -> Result<Rgb8> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let raw = img.into_raw();
    Ok(Array3::from_shape_vec((h as usize, w as usize, 3), raw).expect("rgb8 buffer"))
}

pub fn save_rgb8(path: &Path, img: &Rgb8) -> Result<()> {
    let (h, w, _) = img.dim();
    let data = img.as_standard_layout().as_slice().unwrap().to_vec();
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(w as u32, h as u32, data).expect("rgb8 buffer");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a mask PNG; any value ≥ 128 is card (on-disk encoding 0/255).
pub fn load_mask_png(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let raw = img.into_raw();
    let mut m = Array2::from_shape_vec((h as usize, w as usize), raw).expect("gray buffer");
    m.mapv_inplace(|v| (v >= 128) as u8);
    Ok(m)
}

/// Saves an in-memory {0,1} mask as a 0/255 grayscale PNG.
pub fn save_mask_png(path: &Path, mask: &Array2<u8>) -> Result<()> {
    let (h, w) = mask.dim();
    let data: Vec<u8> = mask.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let buf: image::GrayImage =
        image::ImageBuffer::from_raw(w as u32, h as u32, data).expect("gray buffer");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_of_pure_red() {
        assert_eq!(luma_bt601([255, 0, 0]), 76);
    }

    #[test]
    fn hsv_round_trip_within_one_level() {
        for &px in &[
            [0u8, 0, 0],
            [255, 255, 255],
            [255, 0, 0],
            [12, 200, 99],
            [130, 129, 131],
            [1, 254, 128],
        ] {
            let (h, s, v) = rgb_to_hsv(px);
            let back = hsv_to_rgb(h, s, v);
            for c in 0..3 {
                assert!(
                    (px[c] as i16 - back[c] as i16).abs() <= 1,
                    "{px:?} -> {back:?}"
                );
            }
        }
    }

    #[test]
    fn gray_pixel_has_zero_saturation() {
        let (_, s, _) = rgb_to_hsv([77, 77, 77]);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn resize_identity_when_same_size() {
        let img = Array3::from_shape_fn((5, 7, 3), |(y, x, c)| (y * 31 + x * 7 + c) as u8);
        let out = resize_bilinear_rgb(&img, 7, 5);
        assert_eq!(img, out);
        let mask = Array2::from_shape_fn((5, 7), |(y, x)| ((y + x) % 2) as u8);
        assert_eq!(resize_nearest_u8(&mask, 7, 5), mask);
    }

    #[test]
    fn nearest_resize_preserves_label_set() {
        let mask = Array2::from_shape_fn((20, 30), |(y, x)| ((y / 3 + x / 4) % 2) as u8);
        let out = resize_nearest_u8(&mask, 13, 9);
        assert!(out.iter().all(|&v| v <= 1));
    }
}
