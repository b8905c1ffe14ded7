//! Synthetic underwater degradation and a classical enhancement baseline.
//!
//! Degradation keeps the attenuation and homogeneous backscatter terms of
//! the underwater image formation model:
//!
//! ```text
//! I_c = J_c * exp(-beta_c * z) + B_c * (1 - exp(-beta_c * z))
//! ```
//!
//! Forward scattering (blur) is not modelled.

use std::path::{Path, PathBuf};

use image::Rgb;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{ColorImage, DepthImage};
use crate::geometry::is_valid_depth;

#[derive(Debug, Error)]
pub enum UnderwaterError {
    #[error("color is {cw}x{ch} but depth is {dw}x{dh}")]
    DimensionMismatch { cw: u32, ch: u32, dw: u32, dh: u32 },
    #[error("invalid water parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("enhanced image {path}: {source}")]
    External {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterParams {
    /// Attenuation per channel (R, G, B), 1/m.
    pub beta: [f64; 3],
    /// Veiling light per channel, in `[0, 1]`.
    pub backlight: [f64; 3],
}

impl Default for WaterParams {
    fn default() -> Self {
        Self {
            beta: [0.6, 0.2, 0.1],
            backlight: [0.1, 0.3, 0.35],
        }
    }
}

impl WaterParams {
    pub fn validate(&self) -> Result<(), UnderwaterError> {
        if self.beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(UnderwaterError::InvalidParam {
                field: "beta",
                reason: "attenuation must be non-negative".into(),
            });
        }
        if self.backlight.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(UnderwaterError::InvalidParam {
                field: "backlight",
                reason: "veiling light must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }

    /// Degrades a single channel value observed at range `z`.
    #[inline]
    pub fn apply(&self, channel: usize, radiance: f64, z: f64) -> f64 {
        let t = (-self.beta[channel] * z).exp();
        radiance * t + self.backlight[channel] * (1.0 - t)
    }
}

/// Applies attenuation and backscatter using the depth image as range.
/// Pixels without depth use the 99th percentile of the valid depths (0 when
/// the frame has no valid depth at all).
pub fn degrade(
    rgb: &ColorImage,
    depth: &DepthImage,
    water: &WaterParams,
) -> Result<ColorImage, UnderwaterError> {
    let (cw, ch) = rgb.dimensions();
    let (dw, dh) = depth.dimensions();
    if (cw, ch) != (dw, dh) {
        return Err(UnderwaterError::DimensionMismatch { cw, ch, dw, dh });
    }
    water.validate()?;
    let mut valid: Vec<f32> = depth
        .pixels()
        .map(|p| p.0[0])
        .filter(|d| is_valid_depth(*d as f64))
        .collect();
    let fallback = if valid.is_empty() {
        0.0
    } else {
        percentile(&mut valid, 0.99) as f64
    };
    Ok(ColorImage::from_fn(cw, ch, |x, y| {
        let d = depth.get_pixel(x, y).0[0] as f64;
        let z = if is_valid_depth(d) { d } else { fallback };
        let j = rgb.get_pixel(x, y).0;
        Rgb([0, 1, 2].map(|c| water.apply(c, j[c] as f64, z) as f32))
    }))
}

/// Nearest-rank percentile, `q` in `[0, 1]`. Reorders `values`.
fn percentile(values: &mut [f32], q: f64) -> f32 {
    let k = ((values.len() - 1) as f64 * q).round() as usize;
    *values.select_nth_unstable_by(k, f32::total_cmp).1
}

/// Gray-world white balance followed by a per-channel 1%–99% stretch.
///
/// Each channel is scaled so its mean matches the mean over all channels,
/// then mapped so that its 1st percentile goes to 0 and its 99th to 1,
/// clamped to `[0, 1]`. A channel with no spread is left as balanced.
pub fn enhance_baseline(rgb: &ColorImage) -> ColorImage {
    let (w, h) = rgb.dimensions();
    let n = (w as usize) * (h as usize);
    if n == 0 {
        return rgb.clone();
    }
    let mut channels: Vec<Vec<f32>> = (0..3)
        .map(|c| rgb.pixels().map(|p| p.0[c]).collect())
        .collect();
    let means: Vec<f64> = channels
        .iter()
        .map(|ch| ch.iter().map(|&v| v as f64).sum::<f64>() / n as f64)
        .collect();
    let gray_mean = means.iter().sum::<f64>() / 3.0;
    for (ch, &m) in channels.iter_mut().zip(&means) {
        if m > 0.0 {
            let gain = (gray_mean / m) as f32;
            ch.iter_mut().for_each(|v| *v *= gain);
        }
    }
    let mut ranges = [(0f32, 1f32); 3];
    let mut stretch = [false; 3];
    let mut scratch = Vec::with_capacity(n);
    for c in 0..3 {
        scratch.clear();
        scratch.extend_from_slice(&channels[c]);
        let lo = percentile(&mut scratch, 0.01);
        let hi = percentile(&mut scratch, 0.99);
        if hi > lo {
            ranges[c] = (lo, hi);
            stretch[c] = true;
        }
    }
    ColorImage::from_fn(w, h, |x, y| {
        let i = (y * w + x) as usize;
        Rgb([0, 1, 2].map(|c| {
            let v = channels[c][i];
            if stretch[c] {
                let (lo, hi) = ranges[c];
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                v
            }
        }))
    })
}

/// Which color image reaches the mapper.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Enhancement {
    #[default]
    Identity,
    Baseline,
    /// Pre-enhanced images read from this directory by source filename.
    ExternalDir(PathBuf),
}

impl Enhancement {
    /// Applies the stage. `source_name` is the color image's path relative
    /// to the sequence root; it is only consulted for `ExternalDir`.
    pub fn apply(&self, rgb: ColorImage, source_name: &Path) -> Result<ColorImage, UnderwaterError> {
        match self {
            Enhancement::Identity => Ok(rgb),
            Enhancement::Baseline => Ok(enhance_baseline(&rgb)),
            Enhancement::ExternalDir(dir) => {
                let file = source_name.file_name().map(Path::new).unwrap_or(source_name);
                let path = dir.join(file);
                let img = image::open(&path)
                    .map_err(|source| UnderwaterError::External {
                        path: path.clone(),
                        source,
                    })?
                    .to_rgb8();
                Ok(crate::frame::color_from_rgb8(&img))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_color(seed: u64, w: u32, h: u32) -> ColorImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ColorImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    #[test]
    fn zero_range_is_identity() {
        let img = random_color(1, 16, 12);
        let out = degrade(&img, &DepthImage::from_pixel(16, 12, Luma([0.0])), &WaterParams::default()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn large_attenuation_gives_veiling_light() {
        let img = random_color(2, 8, 8);
        let w = WaterParams {
            beta: [500.0; 3],
            backlight: [0.2, 0.4, 0.6],
        };
        let out = degrade(&img, &DepthImage::from_pixel(8, 8, Luma([3.0])), &w).unwrap();
        for p in out.pixels() {
            for c in 0..3 {
                assert!((p.0[c] as f64 - w.backlight[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn hand_computed_red_channel() {
        let w = WaterParams {
            beta: [0.6, 0.2, 0.1],
            backlight: [0.3, 0.3, 0.35],
        };
        // e^-1.2 = 0.301194, 0.3 (1 - e^-1.2) = 0.209642
        let got = w.apply(0, 1.0, 2.0);
        assert!((got - 0.510836).abs() < 1e-6, "{got}");
        let img = ColorImage::from_pixel(1, 1, Rgb([1.0, 1.0, 1.0]));
        let out = degrade(&img, &DepthImage::from_pixel(1, 1, Luma([2.0])), &w).unwrap();
        assert!((out.get_pixel(0, 0).0[0] - 0.510836).abs() < 1e-6);
    }

    #[test]
    fn missing_depth_uses_far_percentile() {
        let img = ColorImage::from_pixel(10, 10, Rgb([1.0, 1.0, 1.0]));
        let mut depth = DepthImage::from_fn(10, 10, |x, _| Luma([1.0 + x as f32]));
        depth.put_pixel(0, 0, Luma([0.0]));
        let w = WaterParams::default();
        let out = degrade(&img, &depth, &w).unwrap();
        // 99th percentile of {1..10} with 99 samples is 10
        let expected = w.apply(1, 1.0, 10.0) as f32;
        assert!((out.get_pixel(0, 0).0[1] - expected).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch() {
        let img = ColorImage::new(4, 4);
        assert!(matches!(
            degrade(&img, &DepthImage::new(4, 5), &WaterParams::default()),
            Err(UnderwaterError::DimensionMismatch { .. })
        ));
        let bad = WaterParams { beta: [-1.0, 0.0, 0.0], ..Default::default() };
        assert!(degrade(&img, &DepthImage::new(4, 4), &bad).is_err());
    }

    #[test]
    fn gray_world_equalizes_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = ColorImage::from_fn(64, 48, |_, _| {
            let r: f32 = rng.random_range(0.05..0.45);
            Rgb([r, 2.0 * r, r])
        });
        let out = enhance_baseline(&img);
        let means: Vec<f64> = (0..3)
            .map(|c| out.pixels().map(|p| p.0[c] as f64).sum::<f64>() / (64.0 * 48.0))
            .collect();
        assert!((means[0] - means[1]).abs() < 1e-6 && (means[1] - means[2]).abs() < 1e-6, "{means:?}");
    }

    #[test]
    fn balanced_full_range_is_nearly_unchanged() {
        let img = ColorImage::from_fn(100, 100, |x, y| {
            let v = ((x + 100 * y) as f32) / 9999.0;
            Rgb([v, v, v])
        });
        let out = enhance_baseline(&img);
        for (a, b) in img.pixels().zip(out.pixels()) {
            let v = a.0[0];
            if (0.02..=0.98).contains(&v) {
                assert!((a.0[0] - b.0[0]).abs() < 0.03);
            }
        }
    }

    #[test]
    fn constant_channel_left_unchanged() {
        let img = ColorImage::from_fn(10, 10, |x, _| Rgb([0.5, x as f32 / 9.0, 0.5]));
        let out = enhance_baseline(&img);
        assert!(out.pixels().all(|p| (p.0[0] - 0.5).abs() < 1e-6));
    }

    #[test]
    fn external_directory_substitution() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = image::RgbImage::new(2, 2);
        img.put_pixel(1, 1, Rgb([255, 0, 0]));
        img.save(dir.path().join("000.png")).unwrap();
        let stage = Enhancement::ExternalDir(dir.path().to_path_buf());
        let out = stage.apply(ColorImage::new(2, 2), Path::new("rgb/000.png")).unwrap();
        assert_eq!(out.get_pixel(1, 1).0, [1.0, 0.0, 0.0]);
        assert!(stage.apply(ColorImage::new(2, 2), Path::new("rgb/missing.png")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn degrade_is_monotone_toward_veiling_light(
            j in 0.0f64..1.0, z1 in 0.0f64..10.0, dz in 0.0f64..10.0,
            beta in 0.0f64..2.0, b in 0.0f64..1.0
        ) {
            let w = WaterParams { beta: [beta; 3], backlight: [b; 3] };
            let i1 = w.apply(0, j, z1);
            let i2 = w.apply(0, j, z1 + dz);
            prop_assert!((i2 - b).abs() <= (i1 - b).abs() + 1e-12);
            prop_assert!((0.0..=1.0).contains(&i1));
        }

        #[test]
        fn enhance_is_idempotent_and_in_range(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tint = [rng.random_range(0.2f32..1.0), rng.random_range(0.2f32..1.0), rng.random_range(0.2f32..1.0)];
            let img = ColorImage::from_fn(40, 30, |_, _| {
                Rgb([0, 1, 2].map(|c| tint[c] * rng.random::<f32>()))
            });
            let once = enhance_baseline(&img);
            let twice = enhance_baseline(&once);
            prop_assert_eq!(once.dimensions(), img.dimensions());
            for (a, b) in once.pixels().zip(twice.pixels()) {
                for c in 0..3 {
                    prop_assert!((0.0..=1.0).contains(&a.0[c]));
                    prop_assert!((a.0[c] - b.0[c]).abs() <= 2.0 / 255.0);
                }
            }
        }
    }
}
