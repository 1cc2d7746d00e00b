//! Candidate ranking: point density plus agreement of the re-projected box
//! with the source 2D detection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{in_box, iou_2d, project_box};
use crate::io::Scene;
use crate::seeker::CandidateSet;
use crate::{Box2D, Box3D, CameraModel, Cloud, Point3D};

/// Which terms enter the composite score; the single-term modes exist for ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criteria {
    #[default]
    Combined,
    DensityOnly,
    AlignmentOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub alpha_iou: f64,
    pub min_composite: f64,
    pub criteria: Criteria,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            alpha_iou: 2.0,
            min_composite: 0.0,
            criteria: Criteria::Combined,
        }
    }
}

impl OracleConfig {
    pub fn composite(&self, c1: f64, c2: f64) -> f64 {
        match self.criteria {
            Criteria::Combined => c1 + self.alpha_iou * c2,
            Criteria::DensityOnly => c1,
            Criteria::AlignmentOnly => c2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub bbox: Box3D,
    /// Point count relative to the densest candidate of the frustum.
    pub c1: f64,
    /// IoU of the projected candidate with the detection box.
    pub c2: f64,
    pub composite: f64,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RejectReason {
    EmptyCandidateSet,
    NoPointsInAnyCandidate,
    BelowMinComposite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    Selected(ScoredCandidate),
    Rejected(RejectReason),
}

impl Selection {
    pub fn selected(&self) -> Option<&ScoredCandidate> {
        match self {
            Selection::Selected(s) => Some(s),
            Selection::Rejected(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityScores {
    pub counts: Vec<usize>,
    pub scores: Vec<f64>,
}

impl DensityScores {
    /// No candidate contains a single point; every score is zero.
    pub fn all_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }
}

/// Points that can fall in at least one candidate: those inside the
/// axis-aligned hull of all candidate corners.
fn points_near(cloud: &Cloud, candidates: &[Box3D]) -> Vec<Point3D> {
    let inf = f64::INFINITY;
    let (mut lo, mut hi) = ([inf; 3], [-inf; 3]);
    for c in candidates {
        for p in c.corners() {
            for (k, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
    }
    // corners come from a rotation; pad by a hair so boundary points survive
    let pad = 1e-9;
    cloud
        .points
        .iter()
        .filter(|p| {
            p.x >= lo[0] - pad
                && p.x <= hi[0] + pad
                && p.y >= lo[1] - pad
                && p.y <= hi[1] + pad
                && p.z >= lo[2] - pad
                && p.z <= hi[2] + pad
        })
        .copied()
        .collect()
}

/// Density criterion: in-box counts normalised by the largest count.
pub fn density_scores(cloud: &Cloud, candidates: &[Box3D]) -> DensityScores {
    let near = points_near(cloud, candidates);
    let counts: Vec<usize> = candidates
        .iter()
        .map(|c| near.iter().filter(|p| in_box(**p, c)).count())
        .collect();
    let max = counts.iter().copied().max().unwrap_or(0);
    let scores = if max == 0 {
        vec![0.0; counts.len()]
    } else {
        counts.iter().map(|&c| c as f64 / max as f64).collect()
    };
    DensityScores { counts, scores }
}

/// Alignment criterion: IoU between the projected candidate and the 2D box.
/// A candidate entirely behind the camera scores 0.
pub fn alignment_score(candidate: &Box3D, cam: &CameraModel, det_box: &Box2D) -> f64 {
    match project_box(candidate, cam) {
        Ok(r) => iou_2d(&r, det_box),
        Err(e) => {
            log::warn!("candidate cannot be projected: {e}");
            0.0
        }
    }
}

/// Scores every candidate of a frustum, in candidate order.
pub fn score_candidates(
    cloud: &Cloud,
    set: &CandidateSet,
    cam: &CameraModel,
    cfg: &OracleConfig,
) -> (Vec<ScoredCandidate>, bool) {
    let density = density_scores(cloud, &set.candidates);
    let scored = set
        .candidates
        .iter()
        .zip(&density.scores)
        .enumerate()
        .map(|(index, (c, &c1))| {
            let c2 = alignment_score(c, cam, &set.detection.bbox);
            ScoredCandidate {
                bbox: *c,
                c1,
                c2,
                composite: cfg.composite(c1, c2),
                index,
            }
        })
        .collect();
    (scored, density.all_zero())
}

/// Picks the highest composite score; the earliest candidate wins ties.
///
/// The winner carries the detection's confidence as its score.
pub fn select_best(cloud: &Cloud, set: &CandidateSet, cam: &CameraModel, cfg: &OracleConfig) -> Selection {
    if set.candidates.is_empty() {
        return Selection::Rejected(RejectReason::EmptyCandidateSet);
    }
    let (scored, all_zero) = score_candidates(cloud, set, cam, cfg);
    if all_zero {
        return Selection::Rejected(RejectReason::NoPointsInAnyCandidate);
    }
    let mut best = scored[0];
    for s in &scored[1..] {
        if s.composite > best.composite {
            best = *s;
        }
    }
    if best.composite < cfg.min_composite {
        return Selection::Rejected(RejectReason::BelowMinComposite(best.composite));
    }
    best.bbox.score = set.detection.score.clamp(0.0, 1.0);
    Selection::Selected(best)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankStats {
    pub candidate_sets: usize,
    pub selected: usize,
    pub rejected: usize,
}

/// Runs [`select_best`] over every candidate set of a scene.
pub fn rank_scene(
    scene: &Scene,
    sets: &[CandidateSet],
    cfg: &OracleConfig,
) -> crate::Result<(Vec<ScoredCandidate>, RankStats)> {
    let selections: Vec<crate::Result<Selection>> = sets
        .par_iter()
        .map(|set| {
            let cam = scene.camera(&set.camera_id).ok_or_else(|| {
                crate::Error::Reference(format!("candidate set references unknown camera `{}`", set.camera_id))
            })?;
            Ok(select_best(&scene.cloud, set, cam, cfg))
        })
        .collect();
    let mut out = Vec::new();
    let mut stats = RankStats {
        candidate_sets: sets.len(),
        ..RankStats::default()
    };
    for s in selections {
        match s? {
            Selection::Selected(c) => {
                stats.selected += 1;
                out.push(c);
            }
            Selection::Rejected(_) => stats.rejected += 1,
        }
    }
    Ok((out, stats))
}
