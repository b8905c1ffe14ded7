//! Global mesh map and its sliding-window expansion.
//!
//! Each new frame sees the geometry created during the last `N` frames
//! projected into its image. New samples are only drawn away from the
//! projected vertices; a sample landing inside a projected triangle is kept
//! only if it sits farther than `d_min` from that triangle's plane. Kept
//! samples are triangulated together with the projected vertices and the
//! resulting triangles that touch a new vertex are appended to the map.
//! The vertex and triangle stores are append-only.

use std::collections::VecDeque;
use std::ops::Range;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delaunay::{triangulate, Location, PointLocator};
use crate::features::{detect_features, FeatureMask, SamplingParams};
use crate::frame::{sample_color, sample_depth_bilinear, to_gray, Frame};
use crate::geometry::{project, transform, unproject, CameraModel, PixelPoint, Point3D, Pose};
use crate::mesh_builder::{
    build_frame_mesh, check_frame, max_side_2d, reject_3d_edges, reject_3d_grazing, FrameMesh,
    MeshError, RejectionThresholds,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpansionError {
    #[error("degenerate plane: the three points are collinear")]
    DegeneratePlane,
    #[error("invalid expansion parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionParams {
    /// Number of recent frames whose geometry is projected (`N`).
    pub window_size: usize,
    /// No new sample closer than this to a projected vertex, pixels.
    pub min_pixel_distance: f64,
    /// Plane-distance gate for samples inside the projected mesh, meters.
    pub d_min: f64,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            window_size: 25,
            min_pixel_distance: 10.0,
            d_min: 0.05,
        }
    }
}

impl ExpansionParams {
    pub fn validate(&self) -> Result<(), ExpansionError> {
        let bad = |field, reason: &str| {
            Err(ExpansionError::InvalidParam {
                field,
                reason: reason.into(),
            })
        };
        if self.window_size < 1 {
            return bad("window_size", "must be at least 1");
        }
        if !(self.min_pixel_distance >= 0.0 && self.min_pixel_distance.is_finite()) {
            return bad("min_pixel_distance", "must be a non-negative number");
        }
        if !(self.d_min >= 0.0 && self.d_min.is_finite()) {
            return bad("d_min", "must be a non-negative number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapVertex {
    /// World frame.
    pub position: Point3D,
    pub color: [u8; 3],
    /// Frame that created the vertex.
    pub frame: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowEntry {
    pub frame: u64,
    pub pose: Pose,
    /// Vertices and triangles appended while processing this frame.
    pub vertices: Range<usize>,
    pub triangles: Range<usize>,
}

/// The global map. Cloning gives a consistent snapshot for readers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeshMap {
    vertices: Vec<MapVertex>,
    triangles: Vec<[usize; 3]>,
    window: VecDeque<WindowEntry>,
    frames_processed: u64,
    dense_points: u64,
}

impl MeshMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assemble a map directly from geometry, e.g. after loading a mesh file.
    /// Triangles with out-of-range indices are rejected.
    pub fn from_parts(vertices: Vec<MapVertex>, triangles: Vec<[usize; 3]>) -> Option<Self> {
        if triangles.iter().flatten().any(|&i| i >= vertices.len()) {
            return None;
        }
        Some(Self {
            vertices,
            triangles,
            ..Default::default()
        })
    }

    /// Restores the dense-point tally of a map rebuilt from a file.
    pub fn with_dense_points(mut self, dense_points: u64) -> Self {
        self.dense_points = dense_points;
        self
    }

    pub fn vertices(&self) -> &[MapVertex] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn window(&self) -> &VecDeque<WindowEntry> {
        &self.window
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames_processed
    }

    /// Valid-depth pixels over every processed frame: what a dense point
    /// cloud built from the same frames would hold.
    pub fn dense_point_count(&self) -> u64 {
        self.dense_points
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    fn commit(&mut self, frame_id: u64, pose: Pose, delta: Delta, window_size: usize) {
        let v0 = self.vertices.len();
        let t0 = self.triangles.len();
        self.vertices.extend(delta.vertices);
        self.triangles.extend(delta.triangles);
        self.window.push_back(WindowEntry {
            frame: frame_id,
            pose,
            vertices: v0..self.vertices.len(),
            triangles: t0..self.triangles.len(),
        });
        while self.window.len() > window_size {
            self.window.pop_front();
        }
        self.frames_processed += 1;
        self.dense_points += delta.dense_points;
    }
}

struct Delta {
    vertices: Vec<MapVertex>,
    triangles: Vec<[usize; 3]>,
    dense_points: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedVertex {
    pub pixel: PixelPoint,
    pub map_index: usize,
    /// World position, copied from the map.
    pub position: Point3D,
}

/// Window geometry seen from the current camera. Triangle indices refer to
/// `vertices` of this struct, not to the map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowProjection {
    pub vertices: Vec<ProjectedVertex>,
    pub triangles: Vec<[usize; 3]>,
}

impl WindowProjection {
    pub fn pixels(&self) -> Vec<PixelPoint> {
        self.vertices.iter().map(|v| v.pixel).collect()
    }
}

/// Projects the vertices created in the window frames into the camera at
/// `pose`. A vertex is visible when it is in front of the camera and lands
/// inside the image; a triangle is kept when all three of its vertices are
/// visible. Occlusion is not resolved.
pub fn project_window(map: &MeshMap, cam: &CameraModel, pose: &Pose) -> WindowProjection {
    let (Some(first), Some(last)) = (map.window.front(), map.window.back()) else {
        return WindowProjection::default();
    };
    let span = first.vertices.start..last.vertices.end;
    let mut slot = vec![u32::MAX; span.len()];
    let mut vertices = Vec::new();
    for i in span.clone() {
        let position = map.vertices[i].position;
        let cam_pt = pose.inverse_transform_point(&position);
        if let Ok(pixel) = project(&cam_pt, cam) {
            if cam.contains(&pixel) {
                slot[i - span.start] = vertices.len() as u32;
                vertices.push(ProjectedVertex {
                    pixel,
                    map_index: i,
                    position,
                });
            }
        }
    }
    let lookup = |i: usize| {
        if span.contains(&i) && slot[i - span.start] != u32::MAX {
            Some(slot[i - span.start] as usize)
        } else {
            None
        }
    };
    let mut triangles = Vec::new();
    for entry in &map.window {
        for t in &map.triangles[entry.triangles.clone()] {
            if let (Some(a), Some(b), Some(c)) = (lookup(t[0]), lookup(t[1]), lookup(t[2])) {
                triangles.push([a, b, c]);
            }
        }
    }
    WindowProjection {
        vertices,
        triangles,
    }
}

/// Signed distance of `v_n` from the plane through `v1, v2, v3`, with the
/// normal `(v2 - v1) x (v3 - v1)` normalized.
pub fn point_plane_distance(
    v_n: &Point3D,
    v1: &Point3D,
    v2: &Point3D,
    v3: &Point3D,
) -> Result<f64, ExpansionError> {
    let normal = (v2 - v1).cross(&(v3 - v1));
    let norm = normal.norm();
    let scale = (v2 - v1).norm() * (v3 - v1).norm();
    if !(norm > 1e-12 * scale) || !norm.is_finite() {
        return Err(ExpansionError::DegeneratePlane);
    }
    Ok(normal.dot(&(v_n - v1)) / norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleClass {
    /// Outside every projected triangle.
    KeepOutside,
    /// Inside a projected triangle but off its plane by `distance` meters.
    KeepOffset { triangle: usize, distance: f64 },
    Discard(DiscardReason),
}

impl SampleClass {
    pub fn is_kept(&self) -> bool {
        !matches!(self, SampleClass::Discard(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscardReason {
    /// Within `d_min` of the plane of the triangle it projects into.
    OnPlane { triangle: usize, distance: f64 },
    InvalidDepth,
    DegeneratePlane,
}

/// Point location over a [`WindowProjection`], reusable across samples.
pub struct SampleClassifier<'a> {
    projection: &'a WindowProjection,
    locator: PointLocator<'a>,
}

impl<'a> SampleClassifier<'a> {
    pub fn new(projection: &'a WindowProjection, pixels: &'a [PixelPoint]) -> Self {
        Self {
            projection,
            locator: PointLocator::new(pixels, &projection.triangles),
        }
    }

    pub fn classify(
        &self,
        px: &PixelPoint,
        depth: Option<f64>,
        cam: &CameraModel,
        pose: &Pose,
        d_min: f64,
    ) -> SampleClass {
        let Some(point) = depth
            .and_then(|d| unproject(px, d, cam).ok())
            .map(|p| transform(pose, &p))
        else {
            return SampleClass::Discard(DiscardReason::InvalidDepth);
        };
        match self.locator.locate(px) {
            Location::OutsideHull => SampleClass::KeepOutside,
            Location::Triangle(t) => {
                let [a, b, c] = self.projection.triangles[t].map(|i| self.projection.vertices[i].position);
                match point_plane_distance(&point, &a, &b, &c) {
                    Ok(dist) if dist.abs() > d_min => SampleClass::KeepOffset {
                        triangle: t,
                        distance: dist,
                    },
                    Ok(dist) => SampleClass::Discard(DiscardReason::OnPlane {
                        triangle: t,
                        distance: dist,
                    }),
                    Err(_) => SampleClass::Discard(DiscardReason::DegeneratePlane),
                }
            }
        }
    }
}

/// Classifies one sample against the projected window mesh. `depth` is the
/// metric depth at `px`, `None` when unavailable.
pub fn classify_sample(
    px: &PixelPoint,
    depth: Option<f64>,
    cam: &CameraModel,
    pose: &Pose,
    projection: &WindowProjection,
    d_min: f64,
) -> SampleClass {
    let pixels = projection.pixels();
    SampleClassifier::new(projection, &pixels).classify(px, depth, cam, pose, d_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub project: Duration,
    pub detect: Duration,
    pub classify: Duration,
    pub triangulate: Duration,
    pub reject: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpansionStats {
    pub frame_id: u64,
    pub bootstrap: bool,
    pub projected_vertices: usize,
    pub projected_triangles: usize,
    pub samples: usize,
    pub kept_outside: usize,
    pub kept_offset: usize,
    pub discarded_on_plane: usize,
    pub discarded_invalid_depth: usize,
    pub discarded_degenerate: usize,
    pub rejected_2d: usize,
    pub rejected_3d_edges: usize,
    pub rejected_grazing: usize,
    pub vertices_added: usize,
    pub triangles_added: usize,
    pub diagnostic: Option<String>,
    pub timings: StageTimings,
}

/// Grows `map` with one posed frame.
///
/// On an empty map this is exactly [`build_frame_mesh`]. Otherwise the
/// window is projected, new samples are drawn outside disks of radius
/// `min_pixel_distance` around the projected vertices, classified, lifted,
/// and triangulated together with the projected vertices. Only triangles
/// with at least one new vertex that pass all three rejection filters are
/// appended. Existing geometry is never modified.
///
/// The update is computed completely before anything is written, so an
/// error leaves `map` untouched.
pub fn expand(
    map: &mut MeshMap,
    frame: &Frame,
    cam: &CameraModel,
    params: &ExpansionParams,
    thresholds: &RejectionThresholds,
    sampling: &SamplingParams,
) -> Result<ExpansionStats, ExpansionError> {
    let started = Instant::now();
    params.validate()?;
    thresholds.validate()?;
    sampling.validate().map_err(MeshError::from)?;
    check_frame(frame, cam)?;
    let frame_id = map.frames_processed;
    let dense_points = frame.valid_depth_count();

    if map.is_empty() {
        let t = Instant::now();
        let mesh = build_frame_mesh(frame, frame_id, cam, sampling, thresholds)?;
        let mut stats = bootstrap_stats(&mesh, frame_id);
        stats.timings.detect = t.elapsed();
        let delta = Delta {
            vertices: mesh
                .vertices
                .iter()
                .map(|v| MapVertex {
                    position: v.position,
                    color: v.color,
                    frame: frame_id,
                })
                .collect(),
            triangles: mesh.triangles,
            dense_points,
        };
        map.commit(frame_id, frame.pose, delta, params.window_size);
        stats.timings.total = started.elapsed();
        return Ok(stats);
    }

    let mut stats = ExpansionStats {
        frame_id,
        ..Default::default()
    };
    let pose = &frame.pose;

    let t = Instant::now();
    let projection = project_window(map, cam, pose);
    let pixels = projection.pixels();
    stats.projected_vertices = projection.vertices.len();
    stats.projected_triangles = projection.triangles.len();
    stats.timings.project = t.elapsed();

    let t = Instant::now();
    let mut mask = FeatureMask::allow_all(cam.width, cam.height);
    for px in &pixels {
        mask.exclude_disk(px, params.min_pixel_distance);
    }
    let gray = to_gray(&frame.color);
    let samples = detect_features(&gray, sampling, Some(&mask)).map_err(MeshError::from)?;
    stats.samples = samples.len();
    stats.timings.detect = t.elapsed();

    let t = Instant::now();
    let classifier = SampleClassifier::new(&projection, &pixels);
    let mut new_vertices: Vec<MapVertex> = Vec::new();
    let mut new_pixels: Vec<PixelPoint> = Vec::new();
    for px in &samples {
        let depth = sample_depth_bilinear(&frame.depth, px.u, px.v);
        match classifier.classify(px, depth, cam, pose, params.d_min) {
            SampleClass::KeepOutside => stats.kept_outside += 1,
            SampleClass::KeepOffset { .. } => stats.kept_offset += 1,
            SampleClass::Discard(DiscardReason::OnPlane { .. }) => {
                stats.discarded_on_plane += 1;
                continue;
            }
            SampleClass::Discard(DiscardReason::InvalidDepth) => {
                stats.discarded_invalid_depth += 1;
                continue;
            }
            SampleClass::Discard(DiscardReason::DegeneratePlane) => {
                stats.discarded_degenerate += 1;
                continue;
            }
        }
        let d = depth.expect("kept samples have depth");
        let world = transform(pose, &unproject(px, d, cam).expect("valid depth"));
        new_vertices.push(MapVertex {
            position: world,
            color: sample_color(&frame.color, px.u, px.v),
            frame: frame_id,
        });
        new_pixels.push(*px);
    }
    stats.timings.classify = t.elapsed();

    let mut new_triangles = Vec::new();
    if !new_vertices.is_empty() {
        let t = Instant::now();
        let n_proj = pixels.len();
        let base = map.vertices.len();
        let mut all_pixels = pixels.clone();
        all_pixels.extend_from_slice(&new_pixels);
        let tri = triangulate(&all_pixels);
        stats.timings.triangulate = t.elapsed();

        let t = Instant::now();
        match tri {
            Ok(tri) => {
                // triangulation vertex -> map index, and its world position
                let to_map = |v: usize| {
                    let src = tri.source_indices[v];
                    if src < n_proj {
                        projection.vertices[src].map_index
                    } else {
                        base + (src - n_proj)
                    }
                };
                let position = |m: usize| {
                    if m >= base {
                        new_vertices[m - base].position
                    } else {
                        map.vertices[m].position
                    }
                };
                let candidates: Vec<[usize; 3]> = tri
                    .triangles
                    .iter()
                    .filter(|t| t.iter().any(|&v| tri.source_indices[v] >= n_proj))
                    .copied()
                    .collect();
                let kept_2d: Vec<[usize; 3]> = candidates
                    .iter()
                    .filter(|t| max_side_2d(&t.map(|v| tri.vertices[v])) <= thresholds.l_p)
                    .copied()
                    .collect();
                stats.rejected_2d = candidates.len() - kept_2d.len();

                // 3D filters on a compact local vertex list
                let mapped: Vec<[usize; 3]> = kept_2d.iter().map(|t| t.map(to_map)).collect();
                let mut local_index = std::collections::HashMap::new();
                let mut local_positions = Vec::new();
                let local: Vec<[usize; 3]> = mapped
                    .iter()
                    .map(|t| {
                        t.map(|m| {
                            *local_index.entry(m).or_insert_with(|| {
                                local_positions.push(position(m));
                                local_positions.len() - 1
                            })
                        })
                    })
                    .collect();
                let mut back = vec![0usize; local_positions.len()];
                for (&m, &l) in &local_index {
                    back[l] = m;
                }
                let after_edges = reject_3d_edges(&local, &local_positions, thresholds.l_v);
                stats.rejected_3d_edges = local.len() - after_edges.len();
                let after_grazing =
                    reject_3d_grazing(&after_edges, &local_positions, &pose.center(), thresholds.d);
                stats.rejected_grazing = after_edges.len() - after_grazing.len();
                new_triangles = after_grazing.iter().map(|t| t.map(|l| back[l])).collect();
            }
            Err(e) => stats.diagnostic = Some(e.to_string()),
        }
        stats.timings.reject = t.elapsed();
    }

    stats.vertices_added = new_vertices.len();
    stats.triangles_added = new_triangles.len();
    map.commit(
        frame_id,
        *pose,
        Delta {
            vertices: new_vertices,
            triangles: new_triangles,
            dense_points,
        },
        params.window_size,
    );
    stats.timings.total = started.elapsed();
    Ok(stats)
}

fn bootstrap_stats(mesh: &FrameMesh, frame_id: u64) -> ExpansionStats {
    ExpansionStats {
        frame_id,
        bootstrap: true,
        samples: mesh.stats.features,
        kept_outside: mesh.vertices.len(),
        discarded_invalid_depth: mesh.stats.invalid_depth_vertices,
        rejected_2d: mesh.stats.rejected_2d,
        rejected_3d_edges: mesh.stats.rejected_3d_edges,
        rejected_grazing: mesh.stats.rejected_grazing,
        vertices_added: mesh.vertices.len(),
        triangles_added: mesh.triangles.len(),
        diagnostic: mesh.diagnostic.clone(),
        ..Default::default()
    }
}
