//! Frustum lifting and candidate enumeration.
//!
//! Each 2D detection is lifted into the set of LiDAR points that project
//! inside it. Depth quantiles of those points bound the search along the
//! viewing ray, and the anchor box of the detected class is swept over a
//! `k_d x k_o x k_s` grid of depths, headings and scales.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::project_point;
use crate::io::{AnchorTable, Detection2D, Scene};
use crate::{Box3D, CameraModel, Cloud, Point3D};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    pub k_d: usize,
    pub k_o: usize,
    pub k_s: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub min_frustum_points: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            k_d: 4,
            k_o: 10,
            k_s: 4,
            scale_lo: 0.95,
            scale_hi: 1.2,
            q_lo: 0.0,
            q_hi: 0.25,
            min_frustum_points: 5,
        }
    }
}

impl SearchSpec {
    pub fn candidates_per_frustum(&self) -> usize {
        self.k_d * self.k_o * self.k_s
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_d == 0 || self.k_o == 0 || self.k_s == 0 {
            return Err(Error::Config("interval counts must be at least 1".into()));
        }
        if !(self.scale_lo > 0.0 && self.scale_lo <= self.scale_hi) {
            return Err(Error::Config("scale range must be positive and ordered".into()));
        }
        if !(0.0 <= self.q_lo && self.q_lo <= self.q_hi && self.q_hi <= 1.0) {
            return Err(Error::Config("quantiles must satisfy 0 <= q_lo <= q_hi <= 1".into()));
        }
        Ok(())
    }
}

/// A detection lifted into 3D.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    pub camera_id: String,
    pub detection: Detection2D,
    /// Indices of points with positive depth that project inside the box.
    pub member_indices: Vec<usize>,
    pub d_min: f64,
    pub d_max: f64,
}

/// The candidate pool of one frustum.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub camera_id: String,
    pub detection: Detection2D,
    pub member_count: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub candidates: Vec<Box3D>,
}

/// Empirical quantile of sorted data with linear interpolation between
/// order statistics (the `(n - 1) * q` rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    quantile_sorted(values, 0.5)
}

/// Collects the points seen through `det.bbox` and their depth bounds.
pub fn build_frustum(
    cloud: &Cloud,
    cam: &CameraModel,
    det: &Detection2D,
    spec: &SearchSpec,
) -> Result<Frustum> {
    debug_assert_eq!(det.camera_id, cam.camera_id);
    let mut member_indices = Vec::new();
    let mut depths = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if let Ok(proj) = project_point(*p, cam) {
            if det.bbox.contains(proj.u, proj.v) {
                member_indices.push(i);
                depths.push(proj.depth);
            }
        }
    }
    let required = spec.min_frustum_points.max(1);
    if member_indices.len() < required {
        return Err(Error::EmptyFrustum {
            found: member_indices.len(),
            required,
        });
    }
    depths.sort_by(f64::total_cmp);
    Ok(Frustum {
        camera_id: cam.camera_id.clone(),
        detection: det.clone(),
        member_indices,
        d_min: quantile_sorted(&depths, spec.q_lo),
        d_max: quantile_sorted(&depths, spec.q_hi),
    })
}

/// Midpoints of `k` equal sub-intervals of `[lo, hi]`.
pub fn interval_midpoints(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let step = (hi - lo) / k as f64;
    (0..k).map(|i| lo + (i as f64 + 0.5) * step).collect()
}

/// Sweeps the anchor over the depth x heading x scale grid of a frustum.
///
/// Candidate centers lie on the ray through the 2D box center; the vertical
/// center is the median height of the frustum members (the ray height when
/// fewer than three members exist). Candidates are ordered depth-major,
/// then heading, then scale.
pub fn enumerate_candidates(
    frustum: &Frustum,
    cam: &CameraModel,
    anchor: [f64; 3],
    spec: &SearchSpec,
    cloud: &Cloud,
) -> Result<CandidateSet> {
    if frustum.member_indices.is_empty() {
        return Err(Error::EmptyFrustum {
            found: 0,
            required: spec.min_frustum_points.max(1),
        });
    }
    let member_z = if frustum.member_indices.len() >= 3 {
        let mut zs: Vec<f64> = frustum
            .member_indices
            .iter()
            .map(|&i| cloud.points[i].z)
            .collect();
        Some(median(&mut zs))
    } else {
        None
    };
    let (uc, vc) = frustum.detection.bbox.center();
    let depths = interval_midpoints(frustum.d_min, frustum.d_max, spec.k_d);
    let yaws = interval_midpoints(0.0, std::f64::consts::PI, spec.k_o);
    let scales = interval_midpoints(spec.scale_lo, spec.scale_hi, spec.k_s);

    let mut candidates = Vec::with_capacity(spec.candidates_per_frustum());
    for &depth in &depths {
        let on_ray = cam.to_lidar(cam.unproject(uc, vc, depth));
        let center = Point3D::new(on_ray.x, on_ray.y, member_z.unwrap_or(on_ray.z));
        for &yaw in &yaws {
            for &gamma in &scales {
                let size = anchor.map(|e| e * gamma);
                candidates.push(Box3D::new(
                    center,
                    size,
                    yaw,
                    frustum.detection.class_id,
                    frustum.detection.score,
                )?);
            }
        }
    }
    Ok(CandidateSet {
        camera_id: frustum.camera_id.clone(),
        detection: frustum.detection.clone(),
        member_count: frustum.member_indices.len(),
        d_min: frustum.d_min,
        d_max: frustum.d_max,
        candidates,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeekStats {
    pub detections: usize,
    pub frustums_built: usize,
    pub frustums_empty: usize,
    pub candidates: usize,
}

/// Builds the candidate pools for every detection of a scene.
///
/// Frustums below `min_frustum_points` are dropped and counted; a detection
/// whose class has no anchor fails the whole scene.
pub fn seek_scene(
    scene: &Scene,
    detections: &[Detection2D],
    anchors: &AnchorTable,
    spec: &SearchSpec,
) -> Result<(Vec<CandidateSet>, SeekStats)> {
    spec.validate()?;
    let mut jobs = Vec::with_capacity(detections.len());
    for det in detections {
        let anchor = anchors.get(det.class_id).ok_or(Error::MissingAnchor(det.class_id))?;
        let cam = scene.camera(&det.camera_id).ok_or_else(|| {
            Error::Reference(format!("detection references unknown camera `{}`", det.camera_id))
        })?;
        jobs.push((det, cam, anchor));
    }
    let results: Vec<Result<Option<CandidateSet>>> = jobs
        .par_iter()
        .map(|(det, cam, anchor)| match build_frustum(&scene.cloud, cam, det, spec) {
            Ok(frustum) => enumerate_candidates(&frustum, cam, *anchor, spec, &scene.cloud).map(Some),
            Err(Error::EmptyFrustum { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut sets = Vec::new();
    let mut stats = SeekStats {
        detections: detections.len(),
        ..SeekStats::default()
    };
    for r in results {
        match r? {
            Some(set) => {
                stats.frustums_built += 1;
                stats.candidates += set.candidates.len();
                sets.push(set);
            }
            None => stats.frustums_empty += 1,
        }
    }
    if stats.frustums_empty > 0 {
        log::info!(
            "scene {}: dropped {} of {} frustums below {} points",
            scene.scene_id,
            stats.frustums_empty,
            detections.len(),
            spec.min_frustum_points
        );
    }
    Ok((sets, stats))
}
