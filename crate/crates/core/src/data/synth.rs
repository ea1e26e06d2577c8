//! Synthetic ID-card scene generator.
//!
//! Stands in for sequestered real data: renders a procedural card face with
//! rounded corners (or a user-supplied template), warps it with a
//! scale/rotation/perspective homography, composites it over a cluttered
//! background and optionally draws an elliptical "finger" occluder across a
//! card edge. The ground-truth mask is exactly the set of pixels whose
//! composited card alpha exceeds 0.5, minus the occluder.
//!
//! Everything is a pure function of `(config, seed)`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::data::{CaptureSource, CountryCard, Sample, SampleMeta, SegMask, Split};
use crate::error::{Error, Result};
use crate::imgproc::{load_rgb8, resize_bilinear_rgb, Rgb8};

/// ID-1 card aspect ratio (85.60 mm × 53.98 mm).
pub const CARD_ASPECT: f64 = 85.60 / 53.98;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImagePool {
    /// Procedurally rendered pool of `count` variants.
    Procedural { count: usize },
    /// Image files loaded from disk.
    Files { paths: Vec<PathBuf> },
}

impl ImagePool {
    fn len(&self) -> usize {
        match self {
            ImagePool::Procedural { count } => *count,
            ImagePool::Files { paths } => paths.len(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Output canvas size.
    pub width: usize,
    pub height: usize,
    pub templates: ImagePool,
    pub backgrounds: ImagePool,
    /// Rendered template width in pixels (long side of the card).
    pub template_width: usize,
    /// Card long side as a fraction of the shorter canvas dimension.
    pub scale_frac: (f64, f64),
    /// In-plane rotation range, degrees.
    pub rotation_deg: (f64, f64),
    /// Perspective corner jitter as a fraction of the card diagonal.
    pub perspective_frac: f64,
    /// Multiplicative brightness range applied to the card face.
    pub brightness: (f64, f64),
    /// Probability of drawing a finger occluder over a card edge.
    pub occluder_prob: f64,
    /// Draw weights for the four capture-source classes
    /// (Digital, Composite, Printed, Display).
    pub capture_source_weights: [f64; 4],
    /// Draw weights for the five card types (ARG1, ARG2, CHL1, CHL2, MEX).
    pub country_weights: [f64; 5],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 1280,
            height: 720,
            templates: ImagePool::Procedural { count: 8 },
            backgrounds: ImagePool::Procedural { count: 16 },
            template_width: 480,
            scale_frac: (0.25, 0.75),
            rotation_deg: (-45.0, 45.0),
            perspective_frac: 0.08,
            brightness: (0.72, 1.15),
            occluder_prob: 0.25,
            capture_source_weights: [0.25, 0.25, 0.25, 0.25],
            country_weights: [0.2, 0.2, 0.2, 0.2, 0.2],
        }
    }
}

impl GeneratorConfig {
    /// Small scenes for tests and desk-scale runs.
    pub fn desk(width: usize, height: usize) -> Self {
        GeneratorConfig {
            width,
            height,
            template_width: (width.min(height) as f64 * 0.75) as usize,
            ..GeneratorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.len() == 0 {
            return Err(Error::Generator("template pool is empty".into()));
        }
        if self.backgrounds.len() == 0 {
            return Err(Error::Generator("background pool is empty".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Generator("canvas must be at least 16×16".into()));
        }
        if self.scale_frac.0 <= 0.0 || self.scale_frac.1 < self.scale_frac.0 {
            return Err(Error::Generator(format!(
                "invalid scale_frac range {:?}",
                self.scale_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.occluder_prob) {
            return Err(Error::Generator(format!(
                "occluder_prob {} outside [0,1]",
                self.occluder_prob
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Homography
// ---------------------------------------------------------------------------

/// Row-major 3×3 projective transform.
#[derive(Clone, Copy, Debug)]
pub struct Homography(pub [f64; 9]);

impl Homography {
    /// Solves the 8-dof direct linear transform mapping `src[i] -> dst[i]`.
    pub fn from_quad(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Self> {
        let mut a = [[0f64; 9]; 8];
        for i in 0..4 {
            let (x, y) = src[i];
            let (u, v) = dst[i];
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        let h = solve8(&mut a)?;
        Ok(Homography([h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0]))
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let w = m[6] * x + m[7] * y + m[8];
        (
            (m[0] * x + m[1] * y + m[2]) / w,
            (m[3] * x + m[4] * y + m[5]) / w,
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let m = &self.0;
        let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6]);
        if det.abs() < 1e-12 {
            return Err(Error::Generator("degenerate placement homography".into()));
        }
        let inv = [
            (m[4] * m[8] - m[5] * m[7]) / det,
            (m[2] * m[7] - m[1] * m[8]) / det,
            (m[1] * m[5] - m[2] * m[4]) / det,
            (m[5] * m[6] - m[3] * m[8]) / det,
            (m[0] * m[8] - m[2] * m[6]) / det,
            (m[2] * m[3] - m[0] * m[5]) / det,
            (m[3] * m[7] - m[4] * m[6]) / det,
            (m[1] * m[6] - m[0] * m[7]) / det,
            (m[0] * m[4] - m[1] * m[3]) / det,
        ];
        Ok(Homography(inv))
    }
}

/// Gaussian elimination with partial pivoting on the 8×9 augmented system.
fn solve8(a: &mut [[f64; 9]; 8]) -> Result<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Generator("degenerate quad for homography".into()));
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for k in col..9 {
            a[col][k] /= p;
        }
        for row in 0..8 {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for k in col..9 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    let mut h = [0f64; 8];
    for i in 0..8 {
        h[i] = a[i][8];
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Procedural rendering
// ---------------------------------------------------------------------------

fn palette(country: CountryCard) -> ([u8; 3], [u8; 3]) {
    // (body, header) base colours per card family
    match country {
        CountryCard::Arg1 => ([235, 238, 242], [40, 110, 150]),
        CountryCard::Arg2 => ([226, 236, 246], [70, 140, 200]),
        CountryCard::Chl1 => ([242, 236, 222], [170, 120, 60]),
        CountryCard::Chl2 => ([228, 232, 238], [90, 100, 140]),
        CountryCard::Mex => ([234, 240, 230], [60, 130, 90]),
    }
}

fn jitter_color(rng: &mut ChaCha8Rng, base: [u8; 3], amount: i32) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        let d = rng.random_range(-amount..=amount);
        out[c] = (base[c] as i32 + d).clamp(0, 255) as u8;
    }
    out
}

/// Renders a card face with hard-edged rounded corners.
///
/// Returns the RGB face and its {0,1} alpha (support) map.
pub(crate) fn render_card_template(
    rng: &mut ChaCha8Rng,
    country: CountryCard,
    width: usize,
) -> (Rgb8, Array2<u8>) {
    let height = (width as f64 / CARD_ASPECT).round() as usize;
    let radius = 0.07 * width as f64;
    let (body, header) = palette(country);
    let body = jitter_color(rng, body, 8);
    let header = jitter_color(rng, header, 20);
    let mut img = Rgb8::zeros((height, width, 3));
    let mut alpha = Array2::<u8>::zeros((height, width));
    for y in 0..height {
        for x in 0..width {
            if inside_rounded_rect(x as f64 + 0.5, y as f64 + 0.5, width as f64, height as f64, radius)
            {
                alpha[(y, x)] = 1;
                let px = if (y as f64) < 0.18 * height as f64 { header } else { body };
                for c in 0..3 {
                    img[(y, x, c)] = px[c];
                }
            }
        }
    }
    // photo box
    let (px0, py0) = (width / 16, height * 30 / 100);
    let (pw, ph) = (width * 28 / 100, height * 55 / 100);
    fill_rect(&mut img, px0, py0, pw, ph, jitter_color(rng, [180, 172, 165], 12));
    fill_rect(&mut img, px0 + pw / 8, py0 + ph / 6, pw * 3 / 4, ph / 3, jitter_color(rng, [120, 105, 95], 12));
    // text lines
    let text_x = px0 + pw + width / 20;
    let mut ty = height * 32 / 100;
    let line_h = height / 18;
    while ty + line_h < height * 92 / 100 {
        let len = rng.random_range(width / 4..width / 2);
        fill_rect(&mut img, text_x, ty, len, line_h / 2, jitter_color(rng, [60, 60, 70], 15));
        ty += line_h + line_h / 2;
    }
    // fine speckle so the face is not flat
    for y in 0..height {
        for x in 0..width {
            if alpha[(y, x)] == 1 {
                let d: i32 = rng.random_range(-3..=3);
                for c in 0..3 {
                    let v = img[(y, x, c)] as i32 + d;
                    img[(y, x, c)] = v.clamp(0, 255) as u8;
                }
            }
        }
    }
    (img, alpha)
}

pub(crate) fn inside_rounded_rect(x: f64, y: f64, w: f64, h: f64, r: f64) -> bool {
    if x < 0.0 || y < 0.0 || x > w || y > h {
        return false;
    }
    let cx = x.max(r).min(w - r);
    let cy = y.max(r).min(h - r);
    (x - cx).powi(2) + (y - cy).powi(2) <= r * r
}

fn fill_rect(img: &mut Rgb8, x0: usize, y0: usize, w: usize, h: usize, color: [u8; 3]) {
    let (ih, iw, _) = img.dim();
    for y in y0..(y0 + h).min(ih) {
        for x in x0..(x0 + w).min(iw) {
            for c in 0..3 {
                img[(y, x, c)] = color[c];
            }
        }
    }
}

/// Cluttered desk-like background: gradient base, value noise, paper shapes.
pub(crate) fn render_background(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Rgb8 {
    let c0 = [
        rng.random_range(30..200u8),
        rng.random_range(30..200u8),
        rng.random_range(30..200u8),
    ];
    let c1 = jitter_color(rng, c0, 70);
    // two octaves of value noise
    let g0 = noise_grid(rng, 5, 5);
    let g1 = noise_grid(rng, 17, 17);
    let mut img = Rgb8::zeros((height, width, 3));
    for y in 0..height {
        let fy = y as f64 / height as f64;
        for x in 0..width {
            let fx = x as f64 / width as f64;
            let n = 0.75 * sample_grid(&g0, fx, fy) + 0.25 * sample_grid(&g1, fx, fy);
            let shade = 0.55 + 0.65 * n;
            for c in 0..3 {
                let base = c0[c] as f64 * (1.0 - fx * 0.5 - fy * 0.3)
                    + c1[c] as f64 * (fx * 0.5 + fy * 0.3);
                img[(y, x, c)] = (base * shade).clamp(0.0, 255.0) as u8;
            }
        }
    }
    // clutter rectangles (papers, phone, pens)
    let n_items = rng.random_range(2..6usize);
    for _ in 0..n_items {
        let w = rng.random_range(width / 10..width / 3);
        let h = rng.random_range(height / 10..height / 3);
        let x0 = rng.random_range(0..width.saturating_sub(w).max(1));
        let y0 = rng.random_range(0..height.saturating_sub(h).max(1));
        let col = [
            rng.random_range(20..235u8),
            rng.random_range(20..235u8),
            rng.random_range(20..235u8),
        ];
        fill_rect(&mut img, x0, y0, w, h, col);
    }
    img
}

fn noise_grid(rng: &mut ChaCha8Rng, gw: usize, gh: usize) -> Array2<f64> {
    Array2::from_shape_fn((gh, gw), |_| rng.random::<f64>())
}

fn sample_grid(grid: &Array2<f64>, fx: f64, fy: f64) -> f64 {
    let (gh, gw) = grid.dim();
    let x = fx * (gw - 1) as f64;
    let y = fy * (gh - 1) as f64;
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(gw - 1), (y0 + 1).min(gh - 1));
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    grid[(y0, x0)] * (1.0 - tx) * (1.0 - ty)
        + grid[(y0, x1)] * tx * (1.0 - ty)
        + grid[(y1, x0)] * (1.0 - tx) * ty
        + grid[(y1, x1)] * tx * ty
}

// ---------------------------------------------------------------------------
// Scene assembly
// ---------------------------------------------------------------------------

struct Occluder {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    color: [u8; 3],
}

pub(crate) struct ScenePlan {
    template: Rgb8,
    alpha: Array2<u8>,
    background: Rgb8,
    /// template coords -> image coords
    homography: Homography,
    brightness: f64,
    occluder: Option<Occluder>,
    meta: SampleMeta,
}

fn weighted_draw(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        t -= w;
        if t < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

pub(crate) fn plan_scene(cfg: &GeneratorConfig, seed: u64) -> Result<ScenePlan> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d5e_6a7b_93c4_d0f1);
    let country = CountryCard::ALL[weighted_draw(&mut rng, &cfg.country_weights)];
    let capture = CaptureSource::ALL[weighted_draw(&mut rng, &cfg.capture_source_weights)];

    // pool entries depend only on their index (and card family), so a pool is
    // stable across sample seeds
    let template_idx = rng.random_range(0..cfg.templates.len());
    let (template, alpha) = match &cfg.templates {
        ImagePool::Procedural { .. } => {
            let mut trng = ChaCha8Rng::seed_from_u64(
                0xa5a5_0000 ^ (template_idx as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ country as u64,
            );
            render_card_template(&mut trng, country, cfg.template_width)
        }
        ImagePool::Files { paths } => {
            let img = load_rgb8(&paths[template_idx])?;
            let (h, w, _) = img.dim();
            (img, Array2::ones((h, w)))
        }
    };
    let (th, tw, _) = template.dim();

    let bg_idx = rng.random_range(0..cfg.backgrounds.len());
    let background = match &cfg.backgrounds {
        ImagePool::Procedural { .. } => {
            let mut brng = ChaCha8Rng::seed_from_u64(
                0x5151_0000 ^ (bg_idx as u64).wrapping_mul(0x9e3779b97f4a7c15),
            );
            render_background(&mut brng, cfg.width, cfg.height)
        }
        ImagePool::Files { paths } => {
            let img = load_rgb8(&paths[bg_idx])?;
            resize_bilinear_rgb(&img, cfg.width, cfg.height)
        }
    };

    // placement draws (fixed order: scale, rotation, perspective, brightness,
    // position, occluder)
    let frac = rng.random_range(cfg.scale_frac.0..=cfg.scale_frac.1);
    let scale = frac * cfg.width.min(cfg.height) as f64 / tw as f64;
    let rot = rng
        .random_range(cfg.rotation_deg.0..=cfg.rotation_deg.1)
        .to_radians();
    let diag = ((tw * tw + th * th) as f64).sqrt() * scale;
    let corners = [
        (0.0, 0.0),
        (tw as f64, 0.0),
        (tw as f64, th as f64),
        (0.0, th as f64),
    ];
    let (cx, cy) = (tw as f64 / 2.0, th as f64 / 2.0);
    let (sin, cos) = rot.sin_cos();
    let mut placed = [(0.0f64, 0.0f64); 4];
    for (i, &(x, y)) in corners.iter().enumerate() {
        let (dx, dy) = (x - cx, y - cy);
        let rx = scale * (dx * cos - dy * sin);
        let ry = scale * (dx * sin + dy * cos);
        let jx = rng.random_range(-1.0..1.0) * cfg.perspective_frac * diag;
        let jy = rng.random_range(-1.0..1.0) * cfg.perspective_frac * diag;
        placed[i] = (rx + jx, ry + jy);
    }
    let brightness = rng.random_range(cfg.brightness.0..=cfg.brightness.1);

    // fit the warped quad fully inside the canvas, anchoring its top-left
    // bound on an integer pixel (a pure-translation placement then copies
    // template pixels exactly)
    let min_x = placed.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = placed.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = placed.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = placed.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (bw, bh) = (max_x - min_x, max_y - min_y);
    if bw > cfg.width as f64 - 2.0 || bh > cfg.height as f64 - 2.0 {
        return Err(Error::Generator(format!(
            "template footprint {bw:.0}×{bh:.0} exceeds the {}×{} canvas after scaling",
            cfg.width, cfg.height
        )));
    }
    let tx = (rng.random::<f64>() * (cfg.width as f64 - bw - 2.0)).floor() + 1.0 - min_x;
    let ty = (rng.random::<f64>() * (cfg.height as f64 - bh - 2.0)).floor() + 1.0 - min_y;
    for p in placed.iter_mut() {
        p.0 += tx;
        p.1 += ty;
    }
    let homography = Homography::from_quad(&corners, &placed)?;

    // occluder draw happens regardless of probability so that flipping
    // occluder_prob between runs of one seed keeps the placement identical
    let occ_roll = rng.random::<f64>();
    let side = rng.random_range(0..4usize);
    let t = rng.random_range(0.2..0.8);
    let edge = |i: usize| corners[i];
    let (e0, e1) = (edge(side), edge((side + 1) % 4));
    let (ex, ey) = (e0.0 + t * (e1.0 - e0.0), e0.1 + t * (e1.1 - e0.1));
    let (ocx, ocy) = homography.apply(ex, ey);
    let a = diag * rng.random_range(0.06..0.11);
    let b = a * rng.random_range(1.3..2.1);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let skin = jitter_color(&mut rng, [224, 177, 147], 18);
    let occluder = (occ_roll < cfg.occluder_prob).then_some(Occluder {
        cx: ocx,
        cy: ocy,
        a,
        b,
        angle,
        color: skin,
    });

    Ok(ScenePlan {
        template,
        alpha,
        background,
        homography,
        brightness,
        occluder,
        meta: SampleMeta {
            source_id: format!("synth-{seed:012}"),
            country_card: country,
            capture_source: capture,
            split: Split::Train,
        },
    })
}

pub(crate) fn render_scene(plan: &ScenePlan) -> Result<(Rgb8, SegMask, Array2<f32>)> {
    let (bh, bw, _) = plan.background.dim();
    let (th, tw, _) = plan.template.dim();
    let inv = plan.homography.inverse()?;
    let mut image = plan.background.clone();
    let mut alpha_map = Array2::<f32>::zeros((bh, bw));
    let mut mask = SegMask::zeros(bh, bw);

    // bounding box of the warped quad, padded one pixel
    let quad: Vec<(f64, f64)> = [(0.0, 0.0), (tw as f64, 0.0), (tw as f64, th as f64), (0.0, th as f64)]
        .iter()
        .map(|&(x, y)| plan.homography.apply(x, y))
        .collect();
    let x_lo = (quad.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - 1.0).max(0.0) as usize;
    let x_hi = ((quad.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + 1.0) as usize).min(bw);
    let y_lo = (quad.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - 1.0).max(0.0) as usize;
    let y_hi = ((quad.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + 1.0) as usize).min(bh);

    for py in y_lo..y_hi {
        for px in x_lo..x_hi {
            let (u, v) = inv.apply(px as f64 + 0.5, py as f64 + 0.5);
            if !(0.0..=tw as f64).contains(&u) || !(0.0..=th as f64).contains(&v) {
                continue;
            }
            let (fu, fv) = (u - 0.5, v - 0.5);
            let x0 = fu.floor();
            let y0 = fv.floor();
            let (wx, wy) = (fu - x0, fv - y0);
            let xi = |d: f64| (x0 + d).clamp(0.0, tw as f64 - 1.0) as usize;
            let yi = |d: f64| (y0 + d).clamp(0.0, th as f64 - 1.0) as usize;
            let (x0i, x1i, y0i, y1i) = (xi(0.0), xi(1.0), yi(0.0), yi(1.0));
            let a = plan.alpha[(y0i, x0i)] as f64 * (1.0 - wx) * (1.0 - wy)
                + plan.alpha[(y0i, x1i)] as f64 * wx * (1.0 - wy)
                + plan.alpha[(y1i, x0i)] as f64 * (1.0 - wx) * wy
                + plan.alpha[(y1i, x1i)] as f64 * wx * wy;
            if a <= 0.0 {
                continue;
            }
            alpha_map[(py, px)] = a as f32;
            for c in 0..3 {
                let t = plan.template[(y0i, x0i, c)] as f64 * (1.0 - wx) * (1.0 - wy)
                    + plan.template[(y0i, x1i, c)] as f64 * wx * (1.0 - wy)
                    + plan.template[(y1i, x0i, c)] as f64 * (1.0 - wx) * wy
                    + plan.template[(y1i, x1i, c)] as f64 * wx * wy;
                let card = (t * plan.brightness).clamp(0.0, 255.0);
                let bg = image[(py, px, c)] as f64;
                image[(py, px, c)] = (bg * (1.0 - a) + card * a).round().clamp(0.0, 255.0) as u8;
            }
            if a > 0.5 {
                mask.labels_mut()[(py, px)] = 1;
            }
        }
    }

    if let Some(occ) = &plan.occluder {
        let (sin, cos) = occ.angle.sin_cos();
        let reach = occ.a.max(occ.b) + 1.0;
        let y_lo = ((occ.cy - reach).max(0.0)) as usize;
        let y_hi = (((occ.cy + reach) as usize) + 1).min(bh);
        let x_lo = ((occ.cx - reach).max(0.0)) as usize;
        let x_hi = (((occ.cx + reach) as usize) + 1).min(bw);
        for py in y_lo..y_hi {
            for px in x_lo..x_hi {
                let dx = px as f64 + 0.5 - occ.cx;
                let dy = py as f64 + 0.5 - occ.cy;
                let lx = (dx * cos + dy * sin) / occ.a;
                let ly = (-dx * sin + dy * cos) / occ.b;
                let r2 = lx * lx + ly * ly;
                if r2 <= 1.0 {
                    let shade = 1.0 - 0.3 * r2;
                    for c in 0..3 {
                        image[(py, px, c)] = (occ.color[c] as f64 * shade).clamp(0.0, 255.0) as u8;
                    }
                    mask.labels_mut()[(py, px)] = 0;
                    alpha_map[(py, px)] = 0.0;
                }
            }
        }
    }

    Ok((image, mask, alpha_map))
}

/// Procedural background rendered from a bare seed (public helper for the
/// background-permuter preprocessing op).
pub fn procedural_background(seed: u64, width: usize, height: usize) -> Rgb8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb6_b6_b6);
    render_background(&mut rng, width, height)
}

/// Generates one synthetic sample; fully deterministic per `(cfg, seed)`.
pub fn generate_synthetic_sample(cfg: &GeneratorConfig, seed: u64) -> Result<Sample> {
    let plan = plan_scene(cfg, seed)?;
    let (image, mask, _) = render_scene(&plan)?;
    Sample::new(image, mask, plan.meta.clone())
}
