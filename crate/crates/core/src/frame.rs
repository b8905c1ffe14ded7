//! Image containers and the posed RGB-D frame that drives the pipeline.

use image::{ImageBuffer, Luma, Rgb, Rgb32FImage, RgbImage};

use crate::geometry::{is_valid_depth, Pose};

/// Single-channel float image; intensities in `[0, 1]`.
pub type GrayImage = ImageBuffer<Luma<f32>, Vec<f32>>;
/// Metric depth in meters, `0` where there is no measurement.
pub type DepthImage = ImageBuffer<Luma<f32>, Vec<f32>>;
/// Linear RGB in `[0, 1]`.
pub type ColorImage = Rgb32FImage;

/// One posed RGB-D observation.
#[derive(Debug, Clone)]
pub struct Frame {
    pub timestamp: f64,
    pub color: ColorImage,
    pub depth: DepthImage,
    /// World-from-camera.
    pub pose: Pose,
}

impl Frame {
    pub fn new(timestamp: f64, color: ColorImage, depth: DepthImage, pose: Pose) -> Self {
        Self {
            timestamp,
            color,
            depth,
            pose,
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.color.dimensions()
    }

    /// Number of pixels carrying a valid depth measurement.
    pub fn valid_depth_count(&self) -> u64 {
        self.depth
            .pixels()
            .filter(|p| is_valid_depth(p.0[0] as f64))
            .count() as u64
    }
}

/// Luma with fixed weights `0.299 R + 0.587 G + 0.114 B`.
pub fn to_gray(color: &ColorImage) -> GrayImage {
    let (w, h) = color.dimensions();
    let data = color
        .pixels()
        .map(|p| 0.299 * p.0[0] + 0.587 * p.0[1] + 0.114 * p.0[2])
        .collect();
    GrayImage::from_raw(w, h, data).expect("buffer sized from source image")
}

pub fn color_from_rgb8(img: &RgbImage) -> ColorImage {
    let (w, h) = img.dimensions();
    ColorImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x, y).0;
        Rgb([
            p[0] as f32 / 255.0,
            p[1] as f32 / 255.0,
            p[2] as f32 / 255.0,
        ])
    })
}

pub fn color_to_rgb8(img: &ColorImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x, y).0;
        Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    })
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Raw 16-bit depth to meters using `scale` (meters per raw unit).
pub fn depth_from_u16(img: &ImageBuffer<Luma<u16>, Vec<u16>>, scale: f64) -> DepthImage {
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| (p.0[0] as f64 * scale) as f32).collect();
    DepthImage::from_raw(w, h, data).expect("buffer sized from source image")
}

pub fn depth_to_u16(depth: &DepthImage, scale: f64) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let (w, h) = depth.dimensions();
    ImageBuffer::from_fn(w, h, |x, y| {
        let d = depth.get_pixel(x, y).0[0] as f64;
        if is_valid_depth(d) {
            Luma([(d / scale).round().clamp(0.0, u16::MAX as f64) as u16])
        } else {
            Luma([0])
        }
    })
}

/// Bilinear depth lookup. Every pixel with a non-zero interpolation weight
/// must carry a valid depth, otherwise `None`.
pub fn sample_depth_bilinear(depth: &DepthImage, u: f64, v: f64) -> Option<f64> {
    let (w, h) = depth.dimensions();
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let x0 = u.floor() as u32;
    let y0 = v.floor() as u32;
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let mut acc = 0.0;
    for (dx, dy, wgt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        if wgt == 0.0 {
            continue;
        }
        let d = depth.get_pixel(x0 + dx, y0 + dy).0[0] as f64;
        if !is_valid_depth(d) {
            return None;
        }
        acc += wgt * d;
    }
    Some(acc)
}

/// Bilinear color lookup, clamped to the image border, quantized to 8 bits.
pub fn sample_color(color: &ColorImage, u: f64, v: f64) -> [u8; 3] {
    let (w, h) = color.dimensions();
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let x0 = u.floor() as u32;
    let y0 = v.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (u - x0 as f64) as f32;
    let fy = (v - y0 as f64) as f32;
    let p00 = color.get_pixel(x0, y0).0;
    let p10 = color.get_pixel(x1, y0).0;
    let p01 = color.get_pixel(x0, y1).0;
    let p11 = color.get_pixel(x1, y1).0;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        out[c] = to_u8(top * (1.0 - fy) + bottom * fy);
    }
    out
}
