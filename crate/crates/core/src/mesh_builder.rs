//! Single-frame mesh construction.
//!
//! Features are triangulated in the image, long 2D edges are dropped, the
//! surviving vertices are lifted to 3D with the depth image, and the 3D
//! triangles are filtered for long edges and for grazing view angles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delaunay::{triangulate, DelaunayError, Triangulation2D};
use crate::features::{detect_features, FeatureError, SamplingParams};
use crate::frame::{sample_color, sample_depth_bilinear, to_gray, DepthImage, Frame};
use crate::geometry::{transform, unproject, CameraModel, PixelPoint, Point3D, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid rejection threshold `{field}`: {reason}")]
    InvalidThreshold { field: &'static str, reason: String },
    #[error("frame is {got_w}x{got_h}, camera expects {width}x{height}")]
    DimensionMismatch {
        got_w: u32,
        got_h: u32,
        width: u32,
        height: u32,
    },
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// Outlier rejection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionThresholds {
    /// Longest admissible triangle side in the image, pixels.
    pub l_p: f64,
    /// Longest admissible triangle side in space, meters.
    pub l_v: f64,
    /// Floor on `|view · normal|`; triangles seen closer to edge-on are dropped.
    pub d: f64,
}

impl Default for RejectionThresholds {
    fn default() -> Self {
        Self {
            l_p: 80.0,
            l_v: 0.5,
            d: 0.1,
        }
    }
}

impl RejectionThresholds {
    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |field, reason: &str| {
            Err(MeshError::InvalidThreshold {
                field,
                reason: reason.into(),
            })
        };
        if !(self.l_p > 0.0) {
            return bad("l_p", "must be positive");
        }
        if !(self.l_v > 0.0) {
            return bad("l_v", "must be positive");
        }
        if !(self.d >= 0.0 && self.d < 1.0) {
            return bad("d", "must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshVertex {
    /// World frame.
    pub position: Point3D,
    pub color: [u8; 3],
    /// Pixel the vertex was sampled at in its source frame.
    pub pixel: PixelPoint,
}

/// Mesh produced from one frame. Vertices that ended up without any
/// triangle are kept; they can still be connected by later expansion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMesh {
    pub vertices: Vec<MeshVertex>,
    pub triangles: Vec<[usize; 3]>,
    pub source_frame: u64,
    pub diagnostic: Option<String>,
    pub stats: FrameMeshStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameMeshStats {
    pub features: usize,
    pub triangles_2d: usize,
    pub rejected_2d: usize,
    pub invalid_depth_vertices: usize,
    pub dropped_invalid_depth: usize,
    pub rejected_3d_edges: usize,
    pub rejected_grazing: usize,
}

/// Longest side of a 2D triangle.
pub fn max_side_2d(p: &[PixelPoint; 3]) -> f64 {
    p[0].distance(&p[1])
        .max(p[1].distance(&p[2]))
        .max(p[2].distance(&p[0]))
}

/// Longest side of a 3D triangle.
pub fn max_side_3d(v: &[Point3D; 3]) -> f64 {
    (v[1] - v[0])
        .norm()
        .max((v[2] - v[1]).norm())
        .max((v[0] - v[2]).norm())
}

/// Drops triangles whose longest image-plane side exceeds `l_p`. Vertices
/// are left as they are.
pub fn reject_2d(tri: &Triangulation2D, l_p: f64) -> Triangulation2D {
    let triangles = tri
        .triangles
        .iter()
        .filter(|t| max_side_2d(&t.map(|i| tri.vertices[i])) <= l_p)
        .copied()
        .collect();
    Triangulation2D {
        vertices: tri.vertices.clone(),
        triangles,
        source_indices: tri.source_indices.clone(),
    }
}

/// Lifted vertex positions, `None` where depth was unusable.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedVertices {
    pub positions: Vec<Option<Point3D>>,
    /// Triangles with all three vertices lifted.
    pub triangles: Vec<[usize; 3]>,
}

impl LiftedVertices {
    pub fn is_valid(&self, i: usize) -> bool {
        self.positions[i].is_some()
    }
}

/// Lifts triangulation vertices to world space through `depth` and `pose`.
/// A vertex needs every bilinear neighbour with non-zero weight to carry a
/// depth; triangles touching an unlifted vertex are dropped.
pub fn lift_vertices(
    tri: &Triangulation2D,
    depth: &DepthImage,
    cam: &CameraModel,
    pose: &Pose,
) -> LiftedVertices {
    let positions: Vec<Option<Point3D>> = tri
        .vertices
        .iter()
        .map(|px| {
            let d = sample_depth_bilinear(depth, px.u, px.v)?;
            let p = unproject(px, d, cam).ok()?;
            Some(transform(pose, &p))
        })
        .collect();
    let triangles = tri
        .triangles
        .iter()
        .filter(|t| t.iter().all(|&i| positions[i].is_some()))
        .copied()
        .collect();
    LiftedVertices {
        positions,
        triangles,
    }
}

/// Drops triangles whose longest 3D side exceeds `l_v`.
pub fn reject_3d_edges(triangles: &[[usize; 3]], vertices: &[Point3D], l_v: f64) -> Vec<[usize; 3]> {
    triangles
        .iter()
        .filter(|t| max_side_3d(&t.map(|i| vertices[i])) <= l_v)
        .copied()
        .collect()
}

/// `|v_c · n|` for a triangle: `v_c` the unit vector from the camera center
/// to the centroid, `n` the unit normal. `None` for zero-area triangles.
pub fn view_alignment(tri: &[Point3D; 3], camera_center: &Point3D) -> Option<f64> {
    let normal = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let n_norm = normal.norm();
    let centroid = Point3D::from((tri[0].coords + tri[1].coords + tri[2].coords) / 3.0);
    let view = centroid - camera_center;
    let v_norm = view.norm();
    if !(n_norm > 0.0) || !(v_norm > 0.0) || !n_norm.is_finite() {
        return None;
    }
    Some((view.dot(&normal) / (v_norm * n_norm)).abs())
}

/// Drops triangles seen close to edge-on: `|v_c · n| < d`. Zero-area
/// triangles are always dropped.
pub fn reject_3d_grazing(
    triangles: &[[usize; 3]],
    vertices: &[Point3D],
    camera_center: &Point3D,
    d: f64,
) -> Vec<[usize; 3]> {
    triangles
        .iter()
        .filter(|t| view_alignment(&t.map(|i| vertices[i]), camera_center).is_some_and(|a| a >= d))
        .copied()
        .collect()
}

/// Per-frame pipeline: detect, triangulate, 2D rejection, lift, 3D edge
/// rejection, grazing rejection, color attach.
///
/// A frame without enough usable features yields an empty mesh with the
/// triangulation failure recorded in `diagnostic`.
pub fn build_frame_mesh(
    frame: &Frame,
    frame_id: u64,
    cam: &CameraModel,
    sampling: &SamplingParams,
    thresholds: &RejectionThresholds,
) -> Result<FrameMesh, MeshError> {
    check_frame(frame, cam)?;
    thresholds.validate()?;
    let gray = to_gray(&frame.color);
    let features = detect_features(&gray, sampling, None)?;
    Ok(mesh_from_samples(frame, frame_id, cam, &features, thresholds))
}

pub(crate) fn check_frame(frame: &Frame, cam: &CameraModel) -> Result<(), MeshError> {
    let (w, h) = frame.color.dimensions();
    let (dw, dh) = frame.depth.dimensions();
    if (w, h) != (cam.width, cam.height) || (dw, dh) != (cam.width, cam.height) {
        return Err(MeshError::DimensionMismatch {
            got_w: if (w, h) != (cam.width, cam.height) { w } else { dw },
            got_h: if (w, h) != (cam.width, cam.height) { h } else { dh },
            width: cam.width,
            height: cam.height,
        });
    }
    Ok(())
}

pub(crate) fn mesh_from_samples(
    frame: &Frame,
    frame_id: u64,
    cam: &CameraModel,
    features: &[PixelPoint],
    thresholds: &RejectionThresholds,
) -> FrameMesh {
    let mut stats = FrameMeshStats {
        features: features.len(),
        ..Default::default()
    };
    let tri = match triangulate(features) {
        Ok(t) => t,
        Err(e) => {
            return FrameMesh {
                source_frame: frame_id,
                diagnostic: Some(match e {
                    DelaunayError::InsufficientPoints(_) => format!("insufficient points: {e}"),
                    _ => e.to_string(),
                }),
                stats,
                ..Default::default()
            }
        }
    };
    stats.triangles_2d = tri.triangles.len();
    let kept_2d = reject_2d(&tri, thresholds.l_p);
    stats.rejected_2d = tri.triangles.len() - kept_2d.triangles.len();

    let lifted = lift_vertices(&kept_2d, &frame.depth, cam, &frame.pose);
    stats.invalid_depth_vertices = lifted.positions.iter().filter(|p| p.is_none()).count();
    stats.dropped_invalid_depth = kept_2d.triangles.len() - lifted.triangles.len();

    // compact to valid vertices
    let mut remap = vec![usize::MAX; kept_2d.vertices.len()];
    let mut vertices = Vec::with_capacity(kept_2d.vertices.len());
    let mut positions = Vec::with_capacity(kept_2d.vertices.len());
    for (i, pos) in lifted.positions.iter().enumerate() {
        if let Some(p) = pos {
            remap[i] = vertices.len();
            let px = kept_2d.vertices[i];
            positions.push(*p);
            vertices.push(MeshVertex {
                position: *p,
                color: sample_color(&frame.color, px.u, px.v),
                pixel: px,
            });
        }
    }
    let triangles: Vec<[usize; 3]> = lifted.triangles.iter().map(|t| t.map(|i| remap[i])).collect();

    let after_edges = reject_3d_edges(&triangles, &positions, thresholds.l_v);
    stats.rejected_3d_edges = triangles.len() - after_edges.len();
    let center = frame.pose.center();
    let after_grazing = reject_3d_grazing(&after_edges, &positions, &center, thresholds.d);
    stats.rejected_grazing = after_edges.len() - after_grazing.len();

    FrameMesh {
        vertices,
        triangles: after_grazing,
        source_frame: frame_id,
        diagnostic: None,
        stats,
    }
}
