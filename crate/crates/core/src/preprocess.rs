//! Mask-aware preprocessing: background permutation, card graying and HSV
//! jitter. Each op touches only one side of the mask boundary and never the
//! mask itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::imgproc::{hsv_to_rgb, luma_bt601, resize_bilinear_rgb, rgb_to_hsv, Rgb8};

/// Per-image HSV jitter draw.
///
/// `hue_shift_degrees` is uniform on [-10, 18], `sat_multiplier` uniform on
/// [0.9, 1.18].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsvJitterParams {
    pub hue_shift_degrees: f64,
    pub sat_multiplier: f64,
}

pub const HUE_SHIFT_RANGE: (f64, f64) = (-10.0, 18.0);
pub const SAT_MULT_RANGE: (f64, f64) = (0.9, 1.18);

impl HsvJitterParams {
    /// Draws one parameter pair; deterministic per seed.
    pub fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x48535f4a49545452); // "HS_JITTR"
        HsvJitterParams {
            hue_shift_degrees: rng.random_range(HUE_SHIFT_RANGE.0..=HUE_SHIFT_RANGE.1),
            sat_multiplier: rng.random_range(SAT_MULT_RANGE.0..=SAT_MULT_RANGE.1),
        }
    }
}

/// Replaces everything outside the card with `background`.
///
/// The background is resized (bilinearly) to the sample size when it is not
/// already at least as large, then center-cropped.
pub fn permute_background(sample: &Sample, background: &Rgb8) -> Result<Sample> {
    let (h, w, _) = sample.image.dim();
    let (bh, bw, _) = background.dim();
    if bw == 0 || bh == 0 {
        return Err(Error::ShapeMismatch("empty background image".into()));
    }
    let fitted: Rgb8 = if bw < w || bh < h {
        let scale = (w as f64 / bw as f64).max(h as f64 / bh as f64);
        let nw = (bw as f64 * scale).ceil() as usize;
        let nh = (bh as f64 * scale).ceil() as usize;
        resize_bilinear_rgb(background, nw.max(w), nh.max(h))
    } else {
        background.clone()
    };
    let (fh, fw, _) = fitted.dim();
    let (ox, oy) = ((fw - w) / 2, (fh - h) / 2);
    let mut out = sample.clone();
    for y in 0..h {
        for x in 0..w {
            if sample.mask.labels()[(y, x)] == 0 {
                for c in 0..3 {
                    out.image[(y, x, c)] = fitted[(oy + y, ox + x, c)];
                }
            }
        }
    }
    Ok(out)
}

/// Converts card pixels to gray (BT.601 luma replicated over RGB); the
/// background stays untouched.
pub fn gray_mask(sample: &Sample) -> Sample {
    let (h, w, _) = sample.image.dim();
    let mut out = sample.clone();
    for y in 0..h {
        for x in 0..w {
            if sample.mask.labels()[(y, x)] == 1 {
                let px = [
                    sample.image[(y, x, 0)],
                    sample.image[(y, x, 1)],
                    sample.image[(y, x, 2)],
                ];
                let g = luma_bt601(px);
                for c in 0..3 {
                    out.image[(y, x, c)] = g;
                }
            }
        }
    }
    out
}

/// Shifts hue and scales saturation of the card pixels only. The hue shift
/// wraps modulo 360°, saturation clamps to [0, 1]; one draw per image.
pub fn hsv_jitter(sample: &Sample, seed: u64) -> Sample {
    let params = HsvJitterParams::draw(seed);
    hsv_jitter_with(sample, params)
}

/// [`hsv_jitter`] with explicit parameters (used by tests and offline runs).
pub fn hsv_jitter_with(sample: &Sample, params: HsvJitterParams) -> Sample {
    let (h, w, _) = sample.image.dim();
    let mut out = sample.clone();
    for y in 0..h {
        for x in 0..w {
            if sample.mask.labels()[(y, x)] == 1 {
                let px = [
                    sample.image[(y, x, 0)],
                    sample.image[(y, x, 1)],
                    sample.image[(y, x, 2)],
                ];
                let (hh, ss, vv) = rgb_to_hsv(px);
                let nh = (hh + params.hue_shift_degrees).rem_euclid(360.0);
                let ns = (ss * params.sat_multiplier).clamp(0.0, 1.0);
                let npx = hsv_to_rgb(nh, ns, vv);
                for c in 0..3 {
                    out.image[(y, x, c)] = npx[c];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CaptureSource, CountryCard, SampleMeta, SegMask, Split};
    use ndarray::{Array2, Array3};

    fn sample_with_mask(f: impl Fn(usize, usize) -> u8) -> Sample {
        let image = Array3::from_shape_fn((8, 10, 3), |(y, x, c)| {
            (37 * y + 11 * x + 91 * c) as u8
        });
        let mask = SegMask::new(Array2::from_shape_fn((8, 10), |(y, x)| f(y, x))).unwrap();
        Sample::new(
            image,
            mask,
            SampleMeta {
                source_id: "t".into(),
                country_card: CountryCard::Chl1,
                capture_source: CaptureSource::Digital,
                split: Split::Train,
            },
        )
        .unwrap()
    }

    fn bg() -> Rgb8 {
        Array3::from_shape_fn((8, 10, 3), |(y, x, c)| (200 - (y + x + c) as i32) as u8)
    }

    #[test]
    fn permute_background_all_zero_mask_gives_background() {
        let s = sample_with_mask(|_, _| 0);
        let b = bg();
        let out = permute_background(&s, &b).unwrap();
        assert_eq!(out.image, b);
        assert_eq!(out.mask, s.mask);
    }

    #[test]
    fn permute_background_all_one_mask_keeps_image() {
        let s = sample_with_mask(|_, _| 1);
        let out = permute_background(&s, &bg()).unwrap();
        assert_eq!(out.image, s.image);
    }

    #[test]
    fn permute_background_checkerboard_matches_per_pixel_select() {
        let s = sample_with_mask(|y, x| ((y + x) % 2) as u8);
        let b = bg();
        let out = permute_background(&s, &b).unwrap();
        for y in 0..8 {
            for x in 0..10 {
                for c in 0..3 {
                    let expect = if s.mask.labels()[(y, x)] == 1 {
                        s.image[(y, x, c)]
                    } else {
                        b[(y, x, c)]
                    };
                    assert_eq!(out.image[(y, x, c)], expect);
                }
            }
        }
    }

    #[test]
    fn permute_background_upscales_small_backgrounds() {
        let s = sample_with_mask(|_, _| 0);
        let small = Array3::from_elem((3, 4, 3), 99u8);
        let out = permute_background(&s, &small).unwrap();
        assert!(out.image.iter().all(|&v| v == 99));
    }

    #[test]
    fn gray_mask_leaves_background_and_grays_card() {
        let s = sample_with_mask(|y, _| (y < 4) as u8);
        let out = gray_mask(&s);
        for y in 0..8 {
            for x in 0..10 {
                let orig = [
                    s.image[(y, x, 0)],
                    s.image[(y, x, 1)],
                    s.image[(y, x, 2)],
                ];
                if y < 4 {
                    let g = luma_bt601(orig);
                    assert_eq!(out.image[(y, x, 0)], g);
                    assert_eq!(out.image[(y, x, 1)], g);
                    assert_eq!(out.image[(y, x, 2)], g);
                } else {
                    for c in 0..3 {
                        assert_eq!(out.image[(y, x, c)], orig[c]);
                    }
                }
            }
        }
        assert_eq!(out.mask, s.mask);
    }

    #[test]
    fn gray_mask_pure_red_becomes_76() {
        let mut s = sample_with_mask(|_, _| 1);
        s.image.fill(0);
        for y in 0..8 {
            for x in 0..10 {
                s.image[(y, x, 0)] = 255;
            }
        }
        let out = gray_mask(&s);
        assert!(out
            .image
            .iter()
            .all(|&v| v == 76));
    }

    #[test]
    fn gray_pixels_are_fixed_points_of_gray_mask() {
        let mut s = sample_with_mask(|_, _| 1);
        for y in 0..8 {
            for x in 0..10 {
                let g = (13 * y + 7 * x) as u8;
                for c in 0..3 {
                    s.image[(y, x, c)] = g;
                }
            }
        }
        let out = gray_mask(&s);
        assert_eq!(out.image, s.image);
    }

    #[test]
    fn identity_jitter_changes_pixels_by_at_most_one() {
        let s = sample_with_mask(|_, _| 1);
        let out = hsv_jitter_with(
            &s,
            HsvJitterParams {
                hue_shift_degrees: 0.0,
                sat_multiplier: 1.0,
            },
        );
        for (a, b) in s.image.iter().zip(out.image.iter()) {
            assert!((*a as i16 - *b as i16).abs() <= 1);
        }
    }

    #[test]
    fn gray_card_is_invariant_under_hue_shift() {
        let mut s = sample_with_mask(|_, _| 1);
        s.image.fill(144);
        let out = hsv_jitter_with(
            &s,
            HsvJitterParams {
                hue_shift_degrees: 15.0,
                sat_multiplier: 1.1,
            },
        );
        for (a, b) in s.image.iter().zip(out.image.iter()) {
            assert!((*a as i16 - *b as i16).abs() <= 1);
        }
    }

    #[test]
    fn saturation_multiplier_matches_scalar_oracle() {
        let mut s = sample_with_mask(|_, _| 1);
        // saturated-ish pixel
        for y in 0..8 {
            for x in 0..10 {
                s.image[(y, x, 0)] = 200;
                s.image[(y, x, 1)] = 80;
                s.image[(y, x, 2)] = 40;
            }
        }
        let params = HsvJitterParams {
            hue_shift_degrees: 0.0,
            sat_multiplier: 1.18,
        };
        let out = hsv_jitter_with(&s, params);
        let (h0, s0, v0) = rgb_to_hsv([200, 80, 40]);
        let expect = hsv_to_rgb(h0, (s0 * 1.18).min(1.0), v0);
        for y in 0..8 {
            for x in 0..10 {
                for c in 0..3 {
                    assert_eq!(out.image[(y, x, c)], expect[c]);
                }
            }
        }
        // and the resulting saturation matches min(1, 1.18·s) within quantization
        let (_, s1, _) = rgb_to_hsv(expect);
        assert!((s1 - (s0 * 1.18).min(1.0)).abs() < 0.01);
    }

    #[test]
    fn jitter_draws_stay_in_range_and_mask_untouched() {
        let s = sample_with_mask(|y, x| ((y * x) % 2) as u8);
        for seed in 0..500u64 {
            let p = HsvJitterParams::draw(seed);
            assert!((HUE_SHIFT_RANGE.0..=HUE_SHIFT_RANGE.1).contains(&p.hue_shift_degrees));
            assert!((SAT_MULT_RANGE.0..=SAT_MULT_RANGE.1).contains(&p.sat_multiplier));
        }
        let out = hsv_jitter(&s, 3);
        assert_eq!(out.mask, s.mask);
        // background untouched
        for y in 0..8 {
            for x in 0..10 {
                if s.mask.labels()[(y, x)] == 0 {
                    for c in 0..3 {
                        assert_eq!(out.image[(y, x, c)], s.image[(y, x, c)]);
                    }
                }
            }
        }
    }
}
