//! Trajectory error, map compactness and per-stage timing summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3D, Pose};
use crate::map_expansion::MeshMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no associations between estimated and ground-truth trajectories")]
    NoAssociations,
    #[error("alignment underdetermined: need at least 3 non-collinear positions")]
    AlignmentUnderdetermined,
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("timestamps must be strictly increasing (at index {0})")]
    NonMonotonic(usize),
    #[error("empty timing log")]
    EmptyLog,
}

/// Timestamped poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        if let Some(i) = samples.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(EvalError::NonMonotonic(i + 1));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Applies `t` to every pose (`t * pose`).
    pub fn transformed(&self, t: &Pose) -> Trajectory {
        Trajectory {
            samples: self.samples.iter().map(|(s, p)| (*s, t.compose(p))).collect(),
        }
    }
}

/// One matched pair: estimated and ground-truth positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePair {
    pub est_time: f64,
    pub gt_time: f64,
    pub est: Point3D,
    pub gt: Point3D,
}

/// Greedy one-to-one timestamp matching. Candidate pairs within `max_dt`
/// are taken by increasing `|dt|` (ties by index); each timestamp is used at
/// most once. `b` must be sorted. Returned ordered by the index into `a`.
pub fn associate_timestamps(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, t) in a.iter().enumerate() {
        // b is sorted: only scan the window [t - max_dt, t + max_dt]
        let start = b.partition_point(|g| *g < t - max_dt);
        for (j, g) in b.iter().enumerate().skip(start) {
            if *g > t + max_dt {
                break;
            }
            candidates.push(((g - t).abs(), i, j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut a_used = vec![false; a.len()];
    let mut b_used = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if a_used[i] || b_used[j] {
            continue;
        }
        a_used[i] = true;
        b_used[j] = true;
        pairs.push((i, j));
    }
    pairs.sort_unstable();
    pairs
}

/// Matches estimated to ground-truth poses with [`associate_timestamps`].
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<Vec<PosePair>, EvalError> {
    if est.is_empty() || gt.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let te: Vec<f64> = est.samples().iter().map(|s| s.0).collect();
    let tg: Vec<f64> = gt.samples().iter().map(|s| s.0).collect();
    let pairs: Vec<PosePair> = associate_timestamps(&te, &tg, max_dt)
        .into_iter()
        .map(|(i, j)| {
            let (te, pe) = &est.samples()[i];
            let (tg, pg) = &gt.samples()[j];
            PosePair {
                est_time: *te,
                gt_time: *tg,
                est: pe.center(),
                gt: pg.center(),
            }
        })
        .collect();
    if pairs.is_empty() {
        return Err(EvalError::NoAssociations);
    }
    Ok(pairs)
}

/// Least-squares rigid transform (no scale) taking estimated positions onto
/// ground truth.
pub fn umeyama_align(pairs: &[PosePair]) -> Result<Pose, EvalError> {
    if pairs.len() < 3 {
        return Err(EvalError::AlignmentUnderdetermined);
    }
    let n = pairs.len() as f64;
    let mu_e = pairs.iter().map(|p| p.est.coords).sum::<Vector3<f64>>() / n;
    let mu_g = pairs.iter().map(|p| p.gt.coords).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread_e = Matrix3::zeros();
    for p in pairs {
        let de = p.est.coords - mu_e;
        cov += (p.gt.coords - mu_g) * de.transpose();
        spread_e += de * de.transpose();
    }
    cov /= n;
    spread_e /= n;

    // rank check on the estimated point spread: collinear sets leave the
    // rotation about the line free
    let ev = spread_e.symmetric_eigenvalues();
    let mut sorted = [ev[0], ev[1], ev[2]];
    sorted.sort_by(f64::total_cmp);
    if !(sorted[1] > 1e-12 * sorted[2].max(1e-300)) {
        return Err(EvalError::AlignmentUnderdetermined);
    }

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(EvalError::AlignmentUnderdetermined),
    };
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let t = mu_g - r * mu_e;
    Pose::new(r, t).map_err(|_| EvalError::AlignmentUnderdetermined)
}

/// Sum of squared residuals of `pairs` under `transform`.
pub fn alignment_residual(pairs: &[PosePair], transform: &Pose) -> f64 {
    pairs
        .iter()
        .map(|p| (transform.transform_point(&p.est) - p.gt).norm_squared())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    pub max: f64,
    pub pairs: usize,
}

impl AteReport {
    pub fn to_key_values(&self) -> String {
        format!(
            "metric=ate mean_m={:.6} median_m={:.6} rmse_m={:.6} max_m={:.6} pairs={}",
            self.mean, self.median, self.rmse, self.max, self.pairs
        )
    }
}

/// Absolute trajectory error after rigid alignment.
pub fn ate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<AteReport, EvalError> {
    let pairs = associate(est, gt, max_dt)?;
    let align = umeyama_align(&pairs)?;
    let errors: Vec<f64> = pairs
        .iter()
        .map(|p| (align.transform_point(&p.est) - p.gt).norm())
        .collect();
    Ok(error_report(&errors))
}

fn error_report(errors: &[f64]) -> AteReport {
    let n = errors.len() as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    AteReport {
        mean: errors.iter().sum::<f64>() / n,
        median,
        rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        max: sorted.last().copied().unwrap_or(0.0),
        pairs: errors.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapStats {
    pub vertices: usize,
    pub triangles: usize,
    /// Valid-depth pixels over every frame fed to the map.
    pub dense_points: u64,
}

impl MapStats {
    /// Dense points per mesh vertex; `None` for an empty mesh.
    pub fn compaction_ratio(&self) -> Option<f64> {
        (self.vertices > 0).then(|| self.dense_points as f64 / self.vertices as f64)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "metric=map vertices={} triangles={} dense_points={}",
            self.vertices, self.triangles, self.dense_points
        )
    }
}

pub fn map_stats(map: &MeshMap) -> MapStats {
    MapStats {
        vertices: map.vertices().len(),
        triangles: map.triangles().len(),
        dense_points: map.dense_point_count(),
    }
}

/// Per-frame stage durations in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingLog {
    stages: BTreeMap<String, Vec<f64>>,
    frames: usize,
}

impl TimingLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one frame. `stages` are `(name, milliseconds)`.
    pub fn record<'a>(&mut self, stages: impl IntoIterator<Item = (&'a str, f64)>) {
        for (name, ms) in stages {
            self.stages.entry(name.to_string()).or_default().push(ms);
        }
        self.frames += 1;
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn stage(&self, name: &str) -> Option<&[f64]> {
        self.stages.get(name).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub stages: BTreeMap<String, StageSummary>,
    pub frames: usize,
    /// Frames per second implied by the mean of the `total` stage, if logged.
    pub fps: Option<f64>,
}

impl TimingSummary {
    /// One `stage=... mean_ms=... p50_ms=... p95_ms=...` line per stage.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (name, s) in &self.stages {
            let _ = writeln!(
                out,
                "stage={} mean_ms={:.3} p50_ms={:.3} p95_ms={:.3} max_ms={:.3} n={}",
                name, s.mean_ms, s.p50_ms, s.p95_ms, s.max_ms, s.samples
            );
        }
        if let Some(fps) = self.fps {
            let _ = writeln!(out, "frames={} fps={:.2}", self.frames, fps);
        }
        out
    }
}

/// Nearest-rank percentile on sorted data.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn timing_report(log: &TimingLog) -> Result<TimingSummary, EvalError> {
    if log.stages.values().all(Vec::is_empty) {
        return Err(EvalError::EmptyLog);
    }
    let stages: BTreeMap<String, StageSummary> = log
        .stages
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(name, v)| {
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let summary = StageSummary {
                mean_ms: v.iter().sum::<f64>() / v.len() as f64,
                p50_ms: nearest_rank(&sorted, 0.5),
                p95_ms: nearest_rank(&sorted, 0.95),
                max_ms: *sorted.last().unwrap(),
                samples: v.len(),
            };
            (name.clone(), summary)
        })
        .collect();
    let fps = stages
        .get("total")
        .filter(|s| s.mean_ms > 0.0)
        .map(|s| 1000.0 / s.mean_ms);
    Ok(TimingSummary {
        stages,
        frames: log.frames,
        fps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0) + 1e-3,
        ));
        Pose::from_parts(
            &Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0)),
            Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
        )
    }

    fn random_trajectory(seed: u64, n: usize) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Trajectory::new((0..n).map(|i| (i as f64 * 0.1, random_pose(&mut rng))).collect()).unwrap()
    }

    #[test]
    fn trajectory_requires_increasing_time() {
        let p = Pose::identity();
        assert_eq!(
            Trajectory::new(vec![(0.0, p), (0.0, p)]),
            Err(EvalError::NonMonotonic(1))
        );
    }

    #[test]
    fn association_examples() {
        let gt = random_trajectory(1, 20);
        assert_eq!(associate(&gt, &gt, 0.02).unwrap().len(), 20);
        let shifted = Trajectory::new(gt.samples().iter().map(|(t, p)| (t + 0.01, *p)).collect()).unwrap();
        assert_eq!(associate(&shifted, &gt, 0.02).unwrap().len(), 20);
        let late = Trajectory::new(gt.samples().iter().map(|(t, p)| (t + 100.0, *p)).collect()).unwrap();
        assert_eq!(associate(&late, &gt, 0.02), Err(EvalError::NoAssociations));
    }

    #[test]
    fn identity_alignment() {
        let gt = random_trajectory(2, 30);
        let pairs = associate(&gt, &gt, 0.02).unwrap();
        let t = umeyama_align(&pairs).unwrap();
        assert!((t.rotation() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(t.translation().norm() < 1e-9);
        let r = ate(&gt, &gt, 0.02).unwrap();
        assert!(r.mean < 1e-12 && r.median < 1e-12 && r.rmse < 1e-12);
    }

    #[test]
    fn recovers_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let est = random_trajectory(4, 25);
        let motion = random_pose(&mut rng);
        let gt = est.transformed(&motion);
        let t = umeyama_align(&associate(&est, &gt, 0.02).unwrap()).unwrap();
        assert!((t.rotation() - motion.rotation()).abs().max() < 1e-9);
        assert!((t.translation() - motion.translation()).norm() < 1e-9);
        assert!(ate(&est, &gt, 0.02).unwrap().rmse < 1e-9);
    }

    #[test]
    fn degenerate_alignment() {
        let line = Trajectory::new(
            (0..10)
                .map(|i| (i as f64, Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0))))
                .collect(),
        )
        .unwrap();
        assert_eq!(ate(&line, &line, 0.02), Err(EvalError::AlignmentUnderdetermined));
        let two = Trajectory::new(line.samples()[..2].to_vec()).unwrap();
        assert_eq!(ate(&two, &two, 0.02), Err(EvalError::AlignmentUnderdetermined));
    }

    #[test]
    fn alternating_z_offset() {
        // symmetric planar layout: the optimal alignment stays the identity
        let n = 16;
        let gt: Vec<(f64, Pose)> = (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64;
                (i as f64, Pose::from_translation(Vector3::new(2.0 * a.cos(), 2.0 * a.sin(), 0.0)))
            })
            .collect();
        let est: Vec<(f64, Pose)> = gt
            .iter()
            .enumerate()
            .map(|(i, (t, p))| {
                let dz = if i % 2 == 0 { 0.1 } else { -0.1 };
                (*t, Pose::from_translation(p.translation() + Vector3::new(0.0, 0.0, dz)))
            })
            .collect();
        let (gt, est) = (Trajectory::new(gt).unwrap(), Trajectory::new(est).unwrap());
        let report = ate(&est, &gt, 0.02).unwrap();
        assert!((report.rmse - 0.1).abs() < 1e-9, "{report:?}");

        // brute-force grid over small rotations/translations never beats it
        let pairs = associate(&est, &gt, 0.02).unwrap();
        let best = alignment_residual(&pairs, &umeyama_align(&pairs).unwrap());
        for ax in [-0.02, 0.0, 0.02] {
            for ay in [-0.02, 0.0, 0.02] {
                for tz in [-0.02, 0.0, 0.02] {
                    let p = Pose::from_parts(
                        &Rotation3::from_euler_angles(ax, ay, 0.0),
                        Vector3::new(0.0, 0.0, tz),
                    );
                    assert!(alignment_residual(&pairs, &p) >= best - 1e-12);
                }
            }
        }
    }

    #[test]
    fn noisy_alignment_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = random_trajectory(10, 12);
        let est = Trajectory::new(
            gt.samples()
                .iter()
                .map(|(t, p)| {
                    let noise = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                    (*t, Pose::from_translation(p.translation() + noise))
                })
                .collect(),
        )
        .unwrap();
        let pairs = associate(&est, &gt, 0.02).unwrap();
        let best = alignment_residual(&pairs, &umeyama_align(&pairs).unwrap());
        assert!(best <= alignment_residual(&pairs, &Pose::identity()) + 1e-12);
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            assert!(alignment_residual(&pairs, &p) >= best - 1e-9);
        }
    }

    #[test]
    fn map_stats_examples() {
        assert_eq!(
            map_stats(&MeshMap::new()),
            MapStats { vertices: 0, triangles: 0, dense_points: 0 }
        );
        let v = |x: f64| crate::map_expansion::MapVertex {
            position: Point3D::new(x, 0.0, 1.0),
            color: [0, 0, 0],
            frame: 0,
        };
        let map = MeshMap::from_parts(vec![v(0.0), v(1.0), v(2.0)], vec![[0, 1, 2]]).unwrap();
        let s = map_stats(&map);
        assert_eq!((s.vertices, s.triangles), (3, 1));
    }

    #[test]
    fn timing_examples() {
        let mut log = TimingLog::new();
        for _ in 0..20 {
            log.record([("map", 10.0)]);
        }
        let s = timing_report(&log).unwrap().stages["map"];
        assert_eq!((s.mean_ms, s.p50_ms, s.p95_ms), (10.0, 10.0, 10.0));

        let mut log = TimingLog::new();
        for _ in 0..99 {
            log.record([("map", 10.0), ("total", 20.0)]);
        }
        log.record([("map", 100.0), ("total", 20.0)]);
        let summary = timing_report(&log).unwrap();
        let s = summary.stages["map"];
        assert_eq!(s.p95_ms, 10.0);
        assert!((s.mean_ms - 10.9).abs() < 1e-9);
        assert_eq!(summary.fps, Some(50.0));
        let text = summary.to_key_values();
        assert!(text.contains("stage=map mean_ms=10.900 p50_ms=10.000 p95_ms=10.000"));
        assert_eq!(timing_report(&TimingLog::new()), Err(EvalError::EmptyLog));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ate_is_rigid_invariant(seed in any::<u64>(), n in 4usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = random_trajectory(seed ^ 0x55, n);
            let est = Trajectory::new(gt.samples().iter().map(|(t, p)| {
                let noise = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
                (*t, Pose::from_translation(p.translation() + noise))
            }).collect()).unwrap();
            let base = ate(&est, &gt, 0.02).unwrap();
            let moved = ate(&est.transformed(&random_pose(&mut rng)), &gt, 0.02).unwrap();
            prop_assert!((base.rmse - moved.rmse).abs() < 1e-9);
            prop_assert!((base.mean - moved.mean).abs() < 1e-9);
            prop_assert!((base.median - moved.median).abs() < 1e-9);
            prop_assert!(base.median <= base.max);
            let pairs = associate(&est, &gt, 0.02).unwrap();
            let align = umeyama_align(&pairs).unwrap();
            let sq: f64 = pairs.iter().map(|p| (align.transform_point(&p.est) - p.gt).norm_squared()).sum::<f64>() / n as f64;
            prop_assert!((base.rmse * base.rmse - sq).abs() < 1e-12);
        }
    }
}
