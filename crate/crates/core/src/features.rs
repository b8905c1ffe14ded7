//! Corner sampling with the minimum-eigenvalue (good-features-to-track)
//! criterion, written out directly over the structure tensor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::GrayImage;
use crate::geometry::PixelPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("image too small: {width}x{height} for block size {block}")]
    ImageTooSmall { width: u32, height: u32, block: usize },
    #[error("invalid sampling parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("mask is {mask_w}x{mask_h}, image is {width}x{height}")]
    MaskMismatch {
        mask_w: u32,
        mask_h: u32,
        width: u32,
        height: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub max_points: usize,
    /// Fraction of the strongest response a candidate must reach.
    pub quality_level: f64,
    /// Minimum pixel separation between returned features.
    pub min_distance: f64,
    /// Structure-tensor window, odd.
    pub block_size: usize,
    /// Pixels ignored along each image edge.
    pub border_margin: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            max_points: 500,
            quality_level: 0.01,
            min_distance: 10.0,
            block_size: 3,
            border_margin: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |field, reason: &str| {
            Err(FeatureError::InvalidParam {
                field,
                reason: reason.to_string(),
            })
        };
        if self.max_points < 1 {
            return bad("max_points", "must be at least 1");
        }
        if !(self.quality_level > 0.0 && self.quality_level < 1.0) {
            return bad("quality_level", "must lie in (0, 1)");
        }
        if !(self.min_distance >= 0.0 && self.min_distance.is_finite()) {
            return bad("min_distance", "must be a non-negative number");
        }
        if self.block_size < 3 || self.block_size.is_multiple_of(2) {
            return bad("block_size", "must be odd and at least 3");
        }
        Ok(())
    }
}

/// Per-pixel minimum eigenvalue of the structure tensor. Pixels whose
/// window reaches past the image (including the Sobel support) score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    scores: Vec<f32>,
}

impl ScoreMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.scores[(y * self.width + x) as usize]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.scores
    }

    pub fn max(&self) -> f32 {
        self.scores.iter().copied().fold(0.0, f32::max)
    }
}

/// Boolean admission mask; `true` marks pixels where features may be placed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMask {
    width: u32,
    height: u32,
    allowed: Vec<bool>,
}

impl FeatureMask {
    pub fn allow_all(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            allowed: vec![true; (width * height) as usize],
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn is_allowed(&self, x: u32, y: u32) -> bool {
        self.allowed[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, allowed: bool) {
        self.allowed[(y * self.width + x) as usize] = allowed;
    }

    /// Blocks every pixel strictly closer than `radius` to `center`.
    pub fn exclude_disk(&mut self, center: &PixelPoint, radius: f64) {
        if radius <= 0.0 || !center.is_finite() {
            return;
        }
        let r2 = radius * radius;
        let x_lo = (center.u - radius).floor().max(0.0) as i64;
        let y_lo = (center.v - radius).floor().max(0.0) as i64;
        let x_hi = ((center.u + radius).ceil() as i64).min(self.width as i64 - 1);
        let y_hi = ((center.v + radius).ceil() as i64).min(self.height as i64 - 1);
        for y in y_lo..=y_hi {
            let dy = y as f64 - center.v;
            for x in x_lo..=x_hi {
                let dx = x as f64 - center.u;
                if dx * dx + dy * dy < r2 {
                    self.allowed[(y as u32 * self.width + x as u32) as usize] = false;
                }
            }
        }
    }
}

pub fn corner_score_map(gray: &GrayImage, block_size: usize) -> Result<ScoreMap, FeatureError> {
    let (w, h) = gray.dimensions();
    if block_size < 3 || block_size.is_multiple_of(2) {
        return Err(FeatureError::InvalidParam {
            field: "block_size",
            reason: "must be odd and at least 3".into(),
        });
    }
    if (w as usize) < block_size || (h as usize) < block_size {
        return Err(FeatureError::ImageTooSmall {
            width: w,
            height: h,
            block: block_size,
        });
    }
    let (wu, hu) = (w as usize, h as usize);
    let img = gray.as_raw();
    let n = wu * hu;

    // Sobel gradient products, defined for 1 <= x <= w-2, 1 <= y <= h-2.
    let mut gxx = vec![0f32; n];
    let mut gxy = vec![0f32; n];
    let mut gyy = vec![0f32; n];
    for y in 1..hu - 1 {
        let up = &img[(y - 1) * wu..y * wu];
        let mid = &img[y * wu..(y + 1) * wu];
        let down = &img[(y + 1) * wu..(y + 2) * wu];
        for x in 1..wu - 1 {
            let gx = (up[x + 1] + 2.0 * mid[x + 1] + down[x + 1])
                - (up[x - 1] + 2.0 * mid[x - 1] + down[x - 1]);
            let gy = (down[x - 1] + 2.0 * down[x] + down[x + 1])
                - (up[x - 1] + 2.0 * up[x] + up[x + 1]);
            let i = y * wu + x;
            gxx[i] = gx * gx;
            gxy[i] = gx * gy;
            gyy[i] = gy * gy;
        }
    }

    let r = block_size / 2;
    let mut scores = vec![0f32; n];
    // valid centers keep the whole block inside the Sobel-defined region
    let lo = r + 1;
    if wu < 2 * lo + 1 || hu < 2 * lo + 1 {
        return Ok(ScoreMap {
            width: w,
            height: h,
            scores,
        });
    }
    let (xs_lo, xs_hi) = (lo, wu - 1 - lo);
    let (ys_lo, ys_hi) = (lo, hu - 1 - lo);

    // horizontal box sums, then vertical
    let hsum = |src: &[f32]| {
        let mut out = vec![0f32; n];
        for y in 1..hu - 1 {
            let row = &src[y * wu..(y + 1) * wu];
            for x in xs_lo..=xs_hi {
                let mut s = 0.0;
                for v in &row[x - r..=x + r] {
                    s += v;
                }
                out[y * wu + x] = s;
            }
        }
        out
    };
    let hxx = hsum(&gxx);
    let hxy = hsum(&gxy);
    let hyy = hsum(&gyy);
    for y in ys_lo..=ys_hi {
        for x in xs_lo..=xs_hi {
            let (mut a, mut b, mut c) = (0f32, 0f32, 0f32);
            for yy in y - r..=y + r {
                let i = yy * wu + x;
                a += hxx[i];
                b += hxy[i];
                c += hyy[i];
            }
            scores[y * wu + x] = min_eigenvalue(a as f64, b as f64, c as f64) as f32;
        }
    }
    Ok(ScoreMap {
        width: w,
        height: h,
        scores,
    })
}

/// Smaller eigenvalue of the symmetric matrix `[a b; b c]`, clamped at 0.
#[inline]
pub fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let half_trace = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    (half_trace - (half_diff * half_diff + b * b).sqrt()).max(0.0)
}

/// Greedy strongest-first corner selection.
///
/// Candidates are pixels scoring at least `quality_level` times the largest
/// score of the image. They are visited by descending score (ties: lower
/// row, then lower column) and kept when no already-kept feature lies closer
/// than `min_distance`. Masked-out and border pixels are never candidates.
pub fn detect_features(
    gray: &GrayImage,
    params: &SamplingParams,
    mask: Option<&FeatureMask>,
) -> Result<Vec<PixelPoint>, FeatureError> {
    params.validate()?;
    let (w, h) = gray.dimensions();
    if let Some(m) = mask {
        if m.dimensions() != (w, h) {
            return Err(FeatureError::MaskMismatch {
                mask_w: m.width,
                mask_h: m.height,
                width: w,
                height: h,
            });
        }
    }
    let scores = match corner_score_map(gray, params.block_size) {
        Ok(s) => s,
        Err(FeatureError::ImageTooSmall { .. }) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let max = scores.max();
    if !(max > 0.0) {
        return Ok(Vec::new());
    }
    let threshold = (params.quality_level * max as f64) as f32;
    let threshold = threshold.max(f32::MIN_POSITIVE);
    let margin = params.border_margin;

    // key: inverted score bits in the high word, linear index in the low word,
    // so ascending order is descending score with row-major tie-breaking
    let mut keys: Vec<u64> = Vec::new();
    for y in margin..h.saturating_sub(margin) {
        for x in margin..w.saturating_sub(margin) {
            let s = scores.get(x, y);
            if s >= threshold && mask.is_none_or(|m| m.is_allowed(x, y)) {
                let idx = y * w + x;
                keys.push(((!s.to_bits()) as u64) << 32 | idx as u64);
            }
        }
    }
    keys.sort_unstable();

    let min_d = params.min_distance;
    let mut grid = SpacingGrid::new(w, h, min_d);
    let mut out = Vec::with_capacity(params.max_points.min(keys.len()));
    for key in keys {
        let idx = (key & 0xffff_ffff) as u32;
        let p = PixelPoint::new((idx % w) as f64, (idx / w) as f64);
        if grid.is_free(&p) {
            grid.insert(p);
            out.push(p);
            if out.len() >= params.max_points {
                break;
            }
        }
    }
    Ok(out)
}

/// Uniform bucket grid answering "is any kept point closer than `radius`".
struct SpacingGrid {
    radius: f64,
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<PixelPoint>>,
}

impl SpacingGrid {
    fn new(width: u32, height: u32, radius: f64) -> Self {
        let cell = radius.max(1.0);
        let cols = (width as f64 / cell).ceil() as usize + 1;
        let rows = (height as f64 / cell).ceil() as usize + 1;
        Self {
            radius,
            cell,
            cols,
            rows,
            cells: if radius > 0.0 {
                vec![Vec::new(); cols * rows]
            } else {
                Vec::new()
            },
        }
    }

    fn is_free(&self, p: &PixelPoint) -> bool {
        if self.radius <= 0.0 {
            return true;
        }
        let cx = (p.u / self.cell) as usize;
        let cy = (p.v / self.cell) as usize;
        let r2 = self.radius * self.radius;
        for gy in cy.saturating_sub(1)..=(cy + 1).min(self.rows - 1) {
            for gx in cx.saturating_sub(1)..=(cx + 1).min(self.cols - 1) {
                for q in &self.cells[gy * self.cols + gx] {
                    let (du, dv) = (q.u - p.u, q.v - p.v);
                    if du * du + dv * dv < r2 {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, p: PixelPoint) {
        if self.radius <= 0.0 {
            return;
        }
        let cx = (p.u / self.cell) as usize;
        let cy = (p.v / self.cell) as usize;
        self.cells[cy * self.cols + cx].push(p);
    }
}
