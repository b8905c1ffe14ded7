//! Ray-cast scenes of textured planes for tests, demos and benchmarks.

use image::{Luma, Rgb};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::{ColorImage, DepthImage, Frame};
use crate::geometry::{CameraModel, Point3D, Pose};

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Constant([f32; 3]),
    Checker { size: f64, a: [f32; 3], b: [f32; 3] },
    /// Square cells of random colors, tiled with period `palette.len()`.
    Patches { cell: f64, side: usize, palette: Vec<[f32; 3]> },
}

impl Texture {
    /// `side x side` cells with uniformly random colors.
    pub fn random_patches(cell: f64, side: usize, seed: u64) -> Self {
        Self::random_patches_in(cell, side, seed, [(0.0, 1.0); 3])
    }

    /// Like [`random_patches`](Self::random_patches) with each channel drawn
    /// from its own `[lo, hi)` range.
    pub fn random_patches_in(cell: f64, side: usize, seed: u64, ranges: [(f32, f32); 3]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let palette = (0..side * side)
            .map(|_| ranges.map(|(lo, hi)| lo + (hi - lo) * rng.random::<f32>()))
            .collect();
        Texture::Patches { cell, side, palette }
    }

    fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        match self {
            Texture::Constant(c) => *c,
            Texture::Checker { size, a, b } => {
                let parity = ((x / size).floor() as i64 + (y / size).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Patches { cell, side, palette } => {
                let i = ((x / cell).floor() as i64).rem_euclid(*side as i64) as usize;
                let j = ((y / cell).floor() as i64).rem_euclid(*side as i64) as usize;
                palette[j * side + i]
            }
        }
    }
}

/// A plane patch. `u_axis` and the derived `v_axis` span it; texture
/// coordinates are measured along them from `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub origin: Point3D,
    normal: Vector3<f64>,
    u_axis: Vector3<f64>,
    v_axis: Vector3<f64>,
    /// Half extents along `u_axis` and `v_axis`; unbounded if `None`.
    pub half_extent: Option<(f64, f64)>,
    pub texture: Texture,
}

impl Plane {
    /// `u_dir` need not be orthogonal to `normal`; it is projected.
    pub fn new(origin: Point3D, normal: Vector3<f64>, u_dir: Vector3<f64>, texture: Texture) -> Self {
        let normal = normal.normalize();
        let u_axis = (u_dir - normal * normal.dot(&u_dir)).normalize();
        let v_axis = normal.cross(&u_axis);
        Self {
            origin,
            normal,
            u_axis,
            v_axis,
            half_extent: None,
            texture,
        }
    }

    pub fn bounded(mut self, half_u: f64, half_v: f64) -> Self {
        self.half_extent = Some((half_u, half_v));
        self
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    /// Ray parameter of the first hit with the patch.
    fn intersect(&self, o: &Point3D, dir: &Vector3<f64>) -> Option<(f64, [f32; 3])> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = self.normal.dot(&(self.origin - o)) / denom;
        if !(s > 1e-9) {
            return None;
        }
        let rel = (o + dir * s) - self.origin;
        let (x, y) = (rel.dot(&self.u_axis), rel.dot(&self.v_axis));
        if let Some((hu, hv)) = self.half_extent {
            if x.abs() > hu || y.abs() > hv {
                return None;
            }
        }
        Some((s, self.texture.sample(x, y)))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub planes: Vec<Plane>,
    /// Color where no plane is hit. Such pixels get depth 0.
    pub background: [f32; 3],
}

impl Scene {
    pub fn new(planes: Vec<Plane>) -> Self {
        Self {
            planes,
            background: [0.0; 3],
        }
    }

    /// Renders color and z-depth at `pose` (world from camera).
    pub fn render(&self, cam: &CameraModel, pose: &Pose, timestamp: f64) -> Frame {
        let (w, h) = (cam.width, cam.height);
        let mut color = ColorImage::new(w, h);
        let mut depth = DepthImage::new(w, h);
        let o = pose.center();
        let r = pose.rotation();
        for v in 0..h {
            for u in 0..w {
                // camera ray with unit z, so the hit parameter is the z-depth
                let d_cam = Vector3::new((u as f64 - cam.cx) / cam.fx, (v as f64 - cam.cy) / cam.fy, 1.0);
                let d = r * d_cam;
                let hit = self
                    .planes
                    .iter()
                    .filter_map(|p| p.intersect(&o, &d))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                let (z, c) = hit.unwrap_or((0.0, self.background));
                color.put_pixel(u, v, Rgb(c));
                depth.put_pixel(u, v, Luma([z as f32]));
            }
        }
        Frame::new(timestamp, color, depth, *pose)
    }
}

/// Fronto-parallel checkerboard `distance` meters in front of the identity
/// camera.
pub fn checkerboard(distance: f64, square: f64) -> Scene {
    Scene::new(vec![Plane::new(
        Point3D::new(0.0, 0.0, distance),
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::x(),
        Texture::Checker {
            size: square,
            a: [0.1, 0.1, 0.1],
            b: [0.9, 0.9, 0.9],
        },
    )])
}

/// A randomly colored wall `distance` meters ahead and a camera that slides
/// sideways along it, `step` meters per frame.
pub fn planar_sweep(frames: usize, distance: f64, step: f64, seed: u64) -> (Scene, Vec<Pose>) {
    let scene = Scene::new(vec![Plane::new(
        Point3D::new(0.0, 0.0, distance),
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::x(),
        Texture::random_patches(0.12, 97, seed),
    )]);
    let poses = (0..frames)
        .map(|i| Pose::from_translation(Vector3::new(i as f64 * step, 0.0, 0.0)))
        .collect();
    (scene, poses)
}

/// Several randomly colored, randomly tilted panels at different ranges
/// with a backdrop behind them.
pub fn mondrian(seed: u64) -> Scene {
    mondrian_in(seed, [(0.0, 1.0); 3])
}

/// [`mondrian`] with per-channel color ranges for every patch.
pub fn mondrian_in(seed: u64, ranges: [(f32, f32); 3]) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planes = vec![Plane::new(
        Point3D::new(0.0, 0.0, 6.0),
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::x(),
        Texture::random_patches_in(0.6, 31, rng.random(), ranges),
    )];
    for _ in 0..4 {
        let z = rng.random_range(1.5..4.5);
        let normal = Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), -1.0);
        let half = rng.random_range(0.3..0.8);
        planes.push(
            Plane::new(
                Point3D::new(rng.random_range(-1.0..1.0) * z * 0.5, rng.random_range(-0.7..0.7) * z * 0.5, z),
                normal,
                Vector3::x(),
                Texture::random_patches_in(rng.random_range(0.12..0.3), 17, rng.random(), ranges),
            )
            .bounded(half, half),
        );
    }
    Scene::new(planes)
}
