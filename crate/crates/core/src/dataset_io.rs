//! TUM-style RGB-D sequences on disk, trajectories and mesh files.
//!
//! A sequence directory holds `rgb.txt` and `depth.txt` (`timestamp path`
//! lines), `groundtruth.txt` (`timestamp tx ty tz qx qy qz qw`, world from
//! camera) and the referenced images. Lines starting with `#` are comments.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use image::DynamicImage;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::evaluation::{associate_timestamps, Trajectory};
use crate::frame::{color_from_rgb8, color_to_rgb8, depth_from_u16, depth_to_u16, Frame};
use crate::geometry::{CameraModel, Pose};
use crate::map_expansion::{MapVertex, MeshMap};
use crate::underwater::{degrade, Enhancement, UnderwaterError, WaterParams};

pub const RGB_INDEX: &str = "rgb.txt";
pub const DEPTH_INDEX: &str = "depth.txt";
pub const TRAJECTORY_FILE: &str = "groundtruth.txt";
/// Written next to degraded images.
pub const WATER_MANIFEST: &str = "water.toml";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing {what}: {path}")]
    MissingFile { what: &'static str, path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: depth images must be 16-bit single channel")]
    DepthFormat { path: PathBuf },
    #[error(transparent)]
    Underwater(#[from] UnderwaterError),
    #[error("{path}: unsupported mesh file: {message}")]
    MeshFormat { path: PathBuf, message: String },
}

type Result<T> = std::result::Result<T, DatasetError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn require(path: &Path, what: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(DatasetError::MissingFile {
            what,
            path: path.to_path_buf(),
        })
    }
}

/// Non-comment lines split on whitespace, with 1-based line numbers.
fn data_lines(path: &Path, what: &'static str) -> Result<Vec<(usize, Vec<String>)>> {
    require(path, what)?;
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push((i + 1, line.split_whitespace().map(str::to_string).collect()));
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("expected a number, found `{s}`"),
        })
}

/// Reads a `timestamp path` index, requiring strictly increasing timestamps.
pub fn read_index(path: &Path, what: &'static str) -> Result<Vec<(f64, PathBuf)>> {
    let mut out: Vec<(f64, PathBuf)> = Vec::new();
    for (line, fields) in data_lines(path, what)? {
        if fields.len() < 2 {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                message: "expected `timestamp filename`".into(),
            });
        }
        let t = parse_f64(path, line, &fields[0])?;
        if out.last().is_some_and(|(prev, _)| *prev >= t) {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                message: "timestamps must be strictly increasing".into(),
            });
        }
        out.push((t, PathBuf::from(&fields[1])));
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut samples: Vec<(f64, Pose)> = Vec::new();
    for (line, fields) in data_lines(path, "trajectory")? {
        if fields.len() < 8 {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                message: "expected `timestamp tx ty tz qx qy qz qw`".into(),
            });
        }
        let mut v = [0.0; 8];
        for (k, s) in fields[..8].iter().enumerate() {
            v[k] = parse_f64(path, line, s)?;
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if !(q.norm() > 1e-12) {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                message: "zero quaternion".into(),
            });
        }
        if samples.last().is_some_and(|(prev, _)| *prev >= v[0]) {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line,
                message: "timestamps must be strictly increasing".into(),
            });
        }
        let pose = Pose::from_quaternion(&UnitQuaternion::from_quaternion(q), Vector3::new(v[1], v[2], v[3]));
        samples.push((v[0], pose));
    }
    Ok(Trajectory::new(samples).expect("monotonicity checked while parsing"))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, pose) in traj.samples() {
        let p = pose.translation();
        let q = pose.quaternion();
        out.push_str(&format!(
            "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}\n",
            t, p.x, p.y, p.z, q.i, q.j, q.k, q.w
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Pose at time `t`: linear in translation, spherical in rotation between the
/// bracketing samples. Queries before the first or after the last sample
/// take the end pose if within `max_dt`, otherwise `None`.
pub fn interpolate_pose(traj: &Trajectory, t: f64, max_dt: f64) -> Option<Pose> {
    let s = traj.samples();
    let (first, last) = (s.first()?, s.last()?);
    if t <= first.0 {
        return (first.0 - t <= max_dt).then_some(first.1);
    }
    if t >= last.0 {
        return (t - last.0 <= max_dt).then_some(last.1);
    }
    let k = s.partition_point(|(ts, _)| *ts <= t);
    let (t0, p0) = &s[k - 1];
    let (t1, p1) = &s[k];
    if t == *t0 {
        return Some(*p0);
    }
    let a = (t - t0) / (t1 - t0);
    let q = p0.quaternion().slerp(&p1.quaternion(), a);
    let tr = p0.translation().lerp(p1.translation(), a);
    Some(Pose::from_quaternion(&q, tr))
}

/// Loader settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    /// Meters per raw depth unit.
    pub depth_scale: f64,
    /// Tolerance for color/depth pairing and pose lookup, seconds.
    pub max_dt: f64,
    pub camera: CameraModel,
    pub enhancement: Enhancement,
}

impl LoadOptions {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            depth_scale: cfg.depth_scale,
            max_dt: cfg.max_dt,
            camera: cfg.camera(),
            enhancement: Enhancement::Identity,
        }
    }
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self::from_config(&PipelineConfig::default())
    }
}

/// One associated, posed frame reference. Paths are relative to the root.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEntry {
    pub timestamp: f64,
    pub color: PathBuf,
    pub depth: PathBuf,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub root: PathBuf,
    pub entries: Vec<SequenceEntry>,
    pub depth_scale: f64,
    pub trajectory: PathBuf,
    pub camera: CameraModel,
    /// Color images dropped for lack of a depth image or a pose.
    pub skipped: usize,
}

/// Color/depth pairs by timestamp, without poses.
pub fn associate_rgbd(root: &Path, max_dt: f64) -> Result<Vec<(f64, PathBuf, PathBuf)>> {
    let rgb = read_index(&root.join(RGB_INDEX), "color index")?;
    let depth = read_index(&root.join(DEPTH_INDEX), "depth index")?;
    let tr: Vec<f64> = rgb.iter().map(|e| e.0).collect();
    let td: Vec<f64> = depth.iter().map(|e| e.0).collect();
    Ok(associate_timestamps(&tr, &td, max_dt)
        .into_iter()
        .map(|(i, j)| (rgb[i].0, rgb[i].1.clone(), depth[j].1.clone()))
        .collect())
}

/// Reads the indexes and trajectory and checks that every referenced image
/// exists. Frames are decoded only when iterated.
pub fn load_sequence(root: &Path, opts: &LoadOptions) -> Result<Sequence> {
    let rgb_count = read_index(&root.join(RGB_INDEX), "color index")?.len();
    let pairs = associate_rgbd(root, opts.max_dt)?;
    let trajectory = root.join(TRAJECTORY_FILE);
    let traj = read_trajectory(&trajectory)?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (t, color, depth) in pairs {
        require(&root.join(&color), "color image")?;
        require(&root.join(&depth), "depth image")?;
        if let Some(pose) = interpolate_pose(&traj, t, opts.max_dt) {
            entries.push(SequenceEntry {
                timestamp: t,
                color,
                depth,
                pose,
            });
        }
    }
    let manifest = SequenceManifest {
        root: root.to_path_buf(),
        skipped: rgb_count - entries.len(),
        entries,
        depth_scale: opts.depth_scale,
        trajectory,
        camera: opts.camera,
    };
    Ok(Sequence {
        inner: Arc::new(Inner {
            manifest,
            enhancement: opts.enhancement.clone(),
        }),
    })
}

fn read_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn read_depth(path: &Path, scale: f64) -> Result<crate::frame::DepthImage> {
    match read_image(path)? {
        DynamicImage::ImageLuma16(raw) => Ok(depth_from_u16(&raw, scale)),
        _ => Err(DatasetError::DepthFormat {
            path: path.to_path_buf(),
        }),
    }
}

#[derive(Debug)]
struct Inner {
    manifest: SequenceManifest,
    enhancement: Enhancement,
}

impl Inner {
    fn load(&self, i: usize) -> Result<Frame> {
        let m = &self.manifest;
        let e = &m.entries[i];
        let color = color_from_rgb8(&read_image(&m.root.join(&e.color))?.to_rgb8());
        let color = self.enhancement.apply(color, &e.color)?;
        let depth = read_depth(&m.root.join(&e.depth), m.depth_scale)?;
        Ok(Frame::new(e.timestamp, color, depth, e.pose))
    }
}

/// A loaded sequence. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Sequence {
    inner: Arc<Inner>,
}

impl Sequence {
    pub fn manifest(&self) -> &SequenceManifest {
        &self.inner.manifest
    }

    pub fn len(&self) -> usize {
        self.inner.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decodes frame `i` (color passes through the enhancement stage).
    pub fn load_frame(&self, i: usize) -> Result<Frame> {
        self.inner.load(i)
    }

    /// Frames in timestamp order, decoded on demand.
    pub fn frames(&self) -> impl Iterator<Item = Result<Frame>> + '_ {
        (0..self.len()).map(|i| self.load_frame(i))
    }

    /// Like [`frames`](Self::frames), but frame `k + 1` is decoded on a
    /// background thread while frame `k` is consumed. At most one decoded
    /// frame waits in the queue.
    pub fn prefetch(&self) -> Prefetch {
        let (tx, rx) = sync_channel(1);
        let inner = Arc::clone(&self.inner);
        let handle = std::thread::spawn(move || {
            for i in 0..inner.manifest.entries.len() {
                let frame = inner.load(i);
                let failed = frame.is_err();
                if tx.send(frame).is_err() || failed {
                    break;
                }
            }
        });
        Prefetch {
            rx: Some(rx),
            handle: Some(handle),
        }
    }
}

pub struct Prefetch {
    rx: Option<Receiver<Result<Frame>>>,
    handle: Option<JoinHandle<()>>,
}

impl Iterator for Prefetch {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for Prefetch {
    fn drop(&mut self) {
        // closing the channel unblocks the decoder before joining it
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Writes frames as a sequence directory: `rgb/NNNNNN.png`, 16-bit
/// `depth/NNNNNN.png`, both indexes and the trajectory.
pub fn write_sequence<'a>(root: &Path, frames: impl IntoIterator<Item = &'a Frame>, depth_scale: f64) -> Result<usize> {
    for dir in ["rgb", "depth"] {
        fs::create_dir_all(root.join(dir)).map_err(io_err(root))?;
    }
    let mut rgb_index = String::from("# timestamp filename\n");
    let mut depth_index = rgb_index.clone();
    let mut poses = Vec::new();
    for (i, frame) in frames.into_iter().enumerate() {
        let name = format!("{i:06}.png");
        let (c, d) = (format!("rgb/{name}"), format!("depth/{name}"));
        let cp = root.join(&c);
        color_to_rgb8(&frame.color)
            .save(&cp)
            .map_err(|source| DatasetError::Image { path: cp, source })?;
        let dp = root.join(&d);
        depth_to_u16(&frame.depth, depth_scale)
            .save(&dp)
            .map_err(|source| DatasetError::Image { path: dp, source })?;
        rgb_index.push_str(&format!("{:.6} {c}\n", frame.timestamp));
        depth_index.push_str(&format!("{:.6} {d}\n", frame.timestamp));
        poses.push((frame.timestamp, frame.pose));
    }
    let n = poses.len();
    for (file, text) in [(RGB_INDEX, rgb_index), (DEPTH_INDEX, depth_index)] {
        let p = root.join(file);
        fs::write(&p, text).map_err(io_err(&p))?;
    }
    let traj = Trajectory::new(poses).map_err(|e| DatasetError::Parse {
        path: root.join(TRAJECTORY_FILE),
        line: 0,
        message: e.to_string(),
    })?;
    write_trajectory(&root.join(TRAJECTORY_FILE), &traj)?;
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegradeSummary {
    pub degraded: usize,
    pub water: WaterParams,
}

/// Writes a degraded copy of a sequence to `out`. Color images are replaced
/// under their original relative paths; indexes, trajectory and depth images
/// are copied unchanged, and the water parameters go to `water.toml`.
pub fn degrade_sequence(root: &Path, out: &Path, water: &WaterParams, depth_scale: f64, max_dt: f64) -> Result<DegradeSummary> {
    water.validate()?;
    let pairs = associate_rgbd(root, max_dt)?;
    for (_, color, depth) in &pairs {
        require(&root.join(color), "color image")?;
        require(&root.join(depth), "depth image")?;
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    for file in [RGB_INDEX, DEPTH_INDEX, TRAJECTORY_FILE] {
        let src = root.join(file);
        if src.is_file() {
            fs::copy(&src, out.join(file)).map_err(io_err(&src))?;
        }
    }
    let copy_into = |rel: &Path| -> Result<PathBuf> {
        let dst = out.join(rel);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        Ok(dst)
    };
    for (_, color, depth) in &pairs {
        let depth_dst = copy_into(depth)?;
        let depth_src = root.join(depth);
        fs::copy(&depth_src, &depth_dst).map_err(io_err(&depth_src))?;
        let rgb = color_from_rgb8(&read_image(&root.join(color))?.to_rgb8());
        let d = read_depth(&depth_src, depth_scale)?;
        let degraded = degrade(&rgb, &d, water)?;
        let dst = copy_into(color)?;
        color_to_rgb8(&degraded)
            .save(&dst)
            .map_err(|source| DatasetError::Image { path: dst, source })?;
    }
    let manifest = out.join(WATER_MANIFEST);
    let text = toml::to_string(water).expect("water params serialize");
    fs::write(&manifest, text).map_err(io_err(&manifest))?;
    Ok(DegradeSummary {
        degraded: pairs.len(),
        water: *water,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl MeshFormat {
    /// From the file extension, case-insensitive.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(Self::Ply),
            "obj" => Some(Self::Obj),
            _ => None,
        }
    }
}

/// Binary little-endian PLY: float32 xyz, uint8 rgb per vertex and int32
/// index triples. The dense point tally travels in a header comment.
pub fn write_ply<W: Write>(map: &MeshMap, mut w: W) -> io::Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\ncomment dense_points {}\n\
         element vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        map.dense_point_count(),
        map.vertices().len(),
        map.triangles().len()
    )?;
    for v in map.vertices() {
        for c in v.position.coords.iter() {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        w.write_all(&v.color)?;
    }
    for t in map.triangles() {
        w.write_all(&[3u8])?;
        for &i in t {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    w.flush()
}

/// Text OBJ with per-vertex color (`v x y z r g b`, colors in `[0, 1]`).
pub fn write_obj<W: Write>(map: &MeshMap, mut w: W) -> io::Result<()> {
    writeln!(w, "# vertices {} faces {}", map.vertices().len(), map.triangles().len())?;
    for v in map.vertices() {
        let p = v.position;
        let [r, g, b] = v.color.map(|c| c as f64 / 255.0);
        writeln!(w, "v {} {} {} {:.6} {:.6} {:.6}", p.x as f32, p.y as f32, p.z as f32, r, g, b)?;
    }
    for t in map.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    w.flush()
}

pub fn export_mesh(map: &MeshMap, path: &Path, format: MeshFormat) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let w = BufWriter::new(file);
    match format {
        MeshFormat::Ply => write_ply(map, w),
        MeshFormat::Obj => write_obj(map, w),
    }
    .map_err(io_err(path))
}

/// Reads a PLY file in the layout produced by [`write_ply`].
pub fn import_ply(path: &Path) -> Result<MeshMap> {
    let bad = |message: &str| DatasetError::MeshFormat {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    require(path, "mesh file")?;
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(io_err(path))? == 0 {
            return Err(bad("header not terminated"));
        }
        let line = line.trim_end().to_string();
        if line == "end_header" {
            break;
        }
        header.push(line);
    }
    let expected = [
        "ply",
        "format binary_little_endian 1.0",
        "element vertex",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "element face",
        "property list uchar int vertex_indices",
    ];
    let mut dense_points = 0;
    let mut counts = Vec::new();
    let mut structure = Vec::new();
    for line in &header {
        if let Some(rest) = line.strip_prefix("comment ") {
            if let Some(n) = rest.strip_prefix("dense_points ") {
                dense_points = n.trim().parse().map_err(|_| bad("bad dense_points comment"))?;
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("element ") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().unwrap_or_default();
            let n: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad element count"))?;
            counts.push(n);
            structure.push(format!("element {name}"));
        } else {
            structure.push(line.clone());
        }
    }
    if structure != expected || counts.len() != 2 {
        return Err(bad("expected binary little-endian xyz/rgb vertices and int triangle faces"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vbuf = vec![0u8; nv * 15];
    r.read_exact(&mut vbuf).map_err(|_| bad("truncated vertex data"))?;
    let vertices = vbuf
        .chunks_exact(15)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes([c[k], c[k + 1], c[k + 2], c[k + 3]]) as f64;
            MapVertex {
                position: crate::geometry::Point3D::new(f(0), f(4), f(8)),
                color: [c[12], c[13], c[14]],
                frame: 0,
            }
        })
        .collect::<Vec<_>>();
    let mut fbuf = vec![0u8; nf * 13];
    r.read_exact(&mut fbuf).map_err(|_| bad("truncated face data"))?;
    let mut triangles = Vec::with_capacity(nf);
    for c in fbuf.chunks_exact(13) {
        if c[0] != 3 {
            return Err(bad("only triangle faces are supported"));
        }
        let idx = |k: usize| i32::from_le_bytes([c[k], c[k + 1], c[k + 2], c[k + 3]]);
        let t = [idx(1), idx(5), idx(9)];
        if t.iter().any(|&i| i < 0) {
            return Err(bad("negative vertex index"));
        }
        triangles.push(t.map(|i| i as usize));
    }
    MeshMap::from_parts(vertices, triangles)
        .map(|m| m.with_dense_points(dense_points))
        .ok_or_else(|| bad("face index out of range"))
}
