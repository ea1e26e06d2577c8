//! The fifteen augmentation operations.
//!
//! Photometric and dropout ops touch the image only. Geometric ops return a
//! transformed (image, mask) pair computed with the same spatial transform
//! (bilinear for the image where resampling is needed, nearest for the mask).

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::imgproc::{
    channel_plane, conv3x3_plane, gaussian_blur_plane, hsv_to_rgb, rgb_to_hsv, Rgb8,
};
use crate::tensor::gaussian;

#[inline]
fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn planes_to_rgb(planes: [Array2<f32>; 3]) -> Rgb8 {
    let (h, w) = planes[0].dim();
    Array3::from_shape_fn((h, w, 3), |(y, x, c)| clamp_u8(planes[c][(y, x)] as f64))
}

// ---------------------------------------------------------------------------
// Additive noise family
// ---------------------------------------------------------------------------

/// Gaussian noise with per-image scale draw; with probability `per_channel`
/// each channel gets independent noise, otherwise one field is shared.
pub fn additive_gaussian_noise(
    img: &Rgb8,
    rng: &mut ChaCha8Rng,
    scale: f64,
    per_channel_prob: f64,
) -> Rgb8 {
    let per_channel = rng.random::<f64>() < per_channel_prob;
    add_noise(img, per_channel, |rng| scale * gaussian(rng), rng)
}

pub fn additive_laplace_noise(img: &Rgb8, rng: &mut ChaCha8Rng, scale: f64) -> Rgb8 {
    add_noise(
        img,
        false,
        |rng| {
            let u: f64 = rng.random::<f64>() - 0.5;
            -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(1e-12).ln()
        },
        rng,
    )
}

/// Sign-randomized Poisson noise (zero-mean on average), shared across
/// channels.
pub fn additive_poisson_noise(img: &Rgb8, rng: &mut ChaCha8Rng, lam: f64) -> Rgb8 {
    let pois = Poisson::new(lam.max(1e-9)).expect("positive lambda");
    add_noise(
        img,
        false,
        |rng| {
            let k: f64 = pois.sample(rng);
            if rng.random::<bool>() {
                k
            } else {
                -k
            }
        },
        rng,
    )
}

fn add_noise(
    img: &Rgb8,
    per_channel: bool,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> f64,
    rng: &mut ChaCha8Rng,
) -> Rgb8 {
    let (h, w, _) = img.dim();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            if per_channel {
                for c in 0..3 {
                    out[(y, x, c)] = clamp_u8(img[(y, x, c)] as f64 + draw(rng));
                }
            } else {
                let n = draw(rng);
                for c in 0..3 {
                    out[(y, x, c)] = clamp_u8(img[(y, x, c)] as f64 + n);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Blurs
// ---------------------------------------------------------------------------

/// Linear motion blur: a length-`k` line kernel at a random angle.
pub fn motion_blur(img: &Rgb8, rng: &mut ChaCha8Rng, k: usize) -> Rgb8 {
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = angle.sin_cos();
    let half = (k / 2) as isize;
    let mut taps = Vec::new();
    for t in -half..=half {
        let dy = (t as f64 * sin).round() as isize;
        let dx = (t as f64 * cos).round() as isize;
        if !taps.contains(&(dy, dx)) {
            taps.push((dy, dx));
        }
    }
    let wgt = 1.0 / taps.len() as f64;
    let (h, w, _) = img.dim();
    let clampi = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for &(dy, dx) in &taps {
                    acc += img[(clampi(y as isize + dy, h), clampi(x as isize + dx, w), c)] as f64;
                }
                out[(y, x, c)] = clamp_u8(acc * wgt);
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &Rgb8, sigma: f64) -> Rgb8 {
    let planes = [0, 1, 2].map(|c| gaussian_blur_plane(&channel_plane(img, c), sigma));
    planes_to_rgb(planes)
}

/// Edge-preserving bilateral filter with neighbourhood diameter `d`.
pub fn bilateral_blur(img: &Rgb8, d: usize, sigma_color: f64, sigma_space: f64) -> Rgb8 {
    let (h, w, _) = img.dim();
    let radius = (d / 2).max(1) as isize;
    let inv2sc = 1.0 / (2.0 * sigma_color * sigma_color);
    let inv2ss = 1.0 / (2.0 * sigma_space * sigma_space);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let center = [
                img[(y, x, 0)] as f64,
                img[(y, x, 1)] as f64,
                img[(y, x, 2)] as f64,
            ];
            let mut acc = [0.0f64; 3];
            let mut norm = 0.0f64;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let sy = y as isize + dy;
                    let sx = x as isize + dx;
                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let (sy, sx) = (sy as usize, sx as usize);
                    let mut dc = 0.0;
                    for c in 0..3 {
                        dc += (img[(sy, sx, c)] as f64 - center[c]).abs();
                    }
                    let wgt = (-(dc * dc) * inv2sc - ((dy * dy + dx * dx) as f64) * inv2ss).exp();
                    for c in 0..3 {
                        acc[c] += wgt * img[(sy, sx, c)] as f64;
                    }
                    norm += wgt;
                }
            }
            for c in 0..3 {
                out[(y, x, c)] = clamp_u8(acc[c] / norm);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Colour
// ---------------------------------------------------------------------------

/// Adds `value` to the hue and saturation channels (OpenCV 8-bit units:
/// hue steps of 2°, saturation steps of 1/255).
pub fn add_to_hue_and_saturation(img: &Rgb8, value: i32) -> Rgb8 {
    let (h, w, _) = img.dim();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let px = [img[(y, x, 0)], img[(y, x, 1)], img[(y, x, 2)]];
            let (hh, ss, vv) = rgb_to_hsv(px);
            let nh = (hh + 2.0 * value as f64).rem_euclid(360.0);
            let ns = (ss + value as f64 / 255.0).clamp(0.0, 1.0);
            let npx = hsv_to_rgb(nh, ns, vv);
            for c in 0..3 {
                out[(y, x, c)] = npx[c];
            }
        }
    }
    out
}

/// Blend of the image with its absolute-Laplacian edge map.
pub fn edge_detect(img: &Rgb8, alpha: f64) -> Rgb8 {
    if alpha == 0.0 {
        return img.clone();
    }
    let kernel = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
    let (h, w, _) = img.dim();
    let mut out = img.clone();
    let edges = [0, 1, 2].map(|c| conv3x3_plane(&channel_plane(img, c), &kernel));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let e = edges[c][(y, x)].abs().min(255.0) as f64;
                out[(y, x, c)] = clamp_u8((1.0 - alpha) * img[(y, x, c)] as f64 + alpha * e);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Dropout family
// ---------------------------------------------------------------------------

/// Fraction of the cells of a coarse grid is zeroed; cell side is
/// `max(2, 0.08·min(H,W))` pixels.
pub fn coarse_dropout(img: &Rgb8, rng: &mut ChaCha8Rng, p: f64) -> Rgb8 {
    let (h, w, _) = img.dim();
    let cell = ((0.08 * h.min(w) as f64).round() as usize).max(2);
    let (gh, gw) = (h.div_ceil(cell), w.div_ceil(cell));
    let mut out = img.clone();
    for gy in 0..gh {
        for gx in 0..gw {
            if rng.random::<f64>() < p {
                for y in (gy * cell)..((gy + 1) * cell).min(h) {
                    for x in (gx * cell)..((gx + 1) * cell).min(w) {
                        for c in 0..3 {
                            out[(y, x, c)] = 0;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Zeroes whole channels, each with probability `p`.
pub fn dropout2d(img: &Rgb8, rng: &mut ChaCha8Rng, p: f64) -> Rgb8 {
    let (h, w, _) = img.dim();
    let mut out = img.clone();
    for c in 0..3 {
        if rng.random::<f64>() < p {
            for y in 0..h {
                for x in 0..w {
                    out[(y, x, c)] = 0;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Spatter (water, mid severity of the common-corruptions ladder)
// ---------------------------------------------------------------------------

pub struct SpatterParams {
    pub loc: f64,
    pub scale: f64,
    pub blur_sigma: f64,
    pub threshold: f64,
    pub alpha: f64,
}

/// Severity-indexed water-spatter parameters (1..=5).
pub fn spatter_params(severity: u32) -> SpatterParams {
    let table = [
        (0.65, 0.30, 4.0, 0.69, 0.40),
        (0.65, 0.30, 3.0, 0.68, 0.45),
        (0.65, 0.30, 2.0, 0.68, 0.50),
        (0.65, 0.30, 1.0, 0.65, 0.60),
        (0.67, 0.40, 1.0, 0.65, 0.70),
    ];
    let (loc, scale, blur_sigma, threshold, alpha) =
        table[(severity.clamp(1, 5) - 1) as usize];
    SpatterParams {
        loc,
        scale,
        blur_sigma,
        threshold,
        alpha,
    }
}

/// Overlays water-like droplets: a smoothed noise field thresholded into
/// splotches, blended with a light water tint.
pub fn spatter(img: &Rgb8, rng: &mut ChaCha8Rng, severity: u32) -> Rgb8 {
    let p = spatter_params(severity);
    let (h, w, _) = img.dim();
    let field = Array2::from_shape_fn((h, w), |_| (p.loc + p.scale * gaussian(rng)) as f32);
    let smooth = gaussian_blur_plane(&field, p.blur_sigma);
    let water = [175.0f64, 238.0, 238.0];
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let m = (((smooth[(y, x)] as f64) - p.threshold) / 0.08).clamp(0.0, 1.0) * p.alpha;
            if m > 0.0 {
                for c in 0..3 {
                    out[(y, x, c)] =
                        clamp_u8((1.0 - m) * img[(y, x, c)] as f64 + m * water[c]);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Geometric ops
// ---------------------------------------------------------------------------

/// Rotation by `quarter_turns`·90° clockwise (image + mask).
pub fn rot90(img: &Rgb8, mask: &Array2<u8>, quarter_turns: u32) -> (Rgb8, Array2<u8>) {
    let q = quarter_turns % 4;
    let (h, w, _) = img.dim();
    match q {
        0 => (img.clone(), mask.clone()),
        2 => {
            let im = Array3::from_shape_fn((h, w, 3), |(y, x, c)| img[(h - 1 - y, w - 1 - x, c)]);
            let mk = Array2::from_shape_fn((h, w), |(y, x)| mask[(h - 1 - y, w - 1 - x)]);
            (im, mk)
        }
        1 => {
            // clockwise: out(y, x) = in(H-1-x, y), out is W×H
            let im = Array3::from_shape_fn((w, h, 3), |(y, x, c)| img[(h - 1 - x, y, c)]);
            let mk = Array2::from_shape_fn((w, h), |(y, x)| mask[(h - 1 - x, y)]);
            (im, mk)
        }
        _ => {
            // counter-clockwise
            let im = Array3::from_shape_fn((w, h, 3), |(y, x, c)| img[(x, w - 1 - y, c)]);
            let mk = Array2::from_shape_fn((w, h), |(y, x)| mask[(x, w - 1 - y)]);
            (im, mk)
        }
    }
}

pub fn flipud(img: &Rgb8, mask: &Array2<u8>) -> (Rgb8, Array2<u8>) {
    let (h, w, _) = img.dim();
    (
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| img[(h - 1 - y, x, c)]),
        Array2::from_shape_fn((h, w), |(y, x)| mask[(h - 1 - y, x)]),
    )
}

pub fn fliplr(img: &Rgb8, mask: &Array2<u8>) -> (Rgb8, Array2<u8>) {
    let (h, w, _) = img.dim();
    (
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| img[(y, w - 1 - x, c)]),
        Array2::from_shape_fn((h, w), |(y, x)| mask[(y, w - 1 - x)]),
    )
}

/// Elastic deformation: a Gaussian-smoothed random displacement field of
/// magnitude `alpha` pixels, σ-controlled smoothness. The image is sampled
/// bilinearly, the mask with nearest-neighbour, both with border replication.
pub fn elastic_transform(
    img: &Rgb8,
    mask: &Array2<u8>,
    rng: &mut ChaCha8Rng,
    alpha: f64,
    sigma: f64,
) -> (Rgb8, Array2<u8>) {
    let (h, w, _) = img.dim();
    let raw_dx = Array2::from_shape_fn((h, w), |_| (rng.random::<f64>() * 2.0 - 1.0) as f32);
    let raw_dy = Array2::from_shape_fn((h, w), |_| (rng.random::<f64>() * 2.0 - 1.0) as f32);
    let dx = gaussian_blur_plane(&raw_dx, sigma);
    let dy = gaussian_blur_plane(&raw_dy, sigma);
    let mut out_img = img.clone();
    let mut out_mask = mask.clone();
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + alpha * dx[(y, x)] as f64;
            let sy = y as f64 + alpha * dy[(y, x)] as f64;
            // bilinear for the image
            let fx = sx.clamp(0.0, (w - 1) as f64);
            let fy = sy.clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            for c in 0..3 {
                let v = img[(y0, x0, c)] as f64 * (1.0 - tx) * (1.0 - ty)
                    + img[(y0, x1, c)] as f64 * tx * (1.0 - ty)
                    + img[(y1, x0, c)] as f64 * (1.0 - tx) * ty
                    + img[(y1, x1, c)] as f64 * tx * ty;
                out_img[(y, x, c)] = clamp_u8(v);
            }
            // nearest for the mask
            let nx = (fx.round() as usize).min(w - 1);
            let ny = (fy.round() as usize).min(h - 1);
            out_mask[(y, x)] = mask[(ny, nx)];
        }
    }
    (out_img, out_mask)
}
