//! Reference methods: confidence-gated label fusion between a 3D detector
//! and an image detector, and density clustering of labelled points into boxes.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Box3D, Point3D};

/// Keeps the 3D label unless the image detector's confidence `p_vlm`
/// exceeds `gamma`.
pub fn logit_fuse(p_vlm: f64, label_3d: u32, label_vlm: u32, gamma: f64) -> u32 {
    if p_vlm <= gamma {
        label_3d
    } else {
        label_vlm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub label_weight: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            eps: 1.5,
            min_pts: 15,
            label_weight: 1000.0,
        }
    }
}

pub const NOISE: i64 = -1;

/// Uniform grid over the first three coordinates with cell size `eps`;
/// the remaining coordinates only enter the distance test.
struct Grid<'a, const D: usize> {
    points: &'a [[f64; D]],
    eps: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a, const D: usize> Grid<'a, D> {
    fn new(points: &'a [[f64; D]], eps: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Grid { points, eps, cells }
    }

    fn key(p: &[f64; D], eps: f64) -> [i64; 3] {
        let mut k = [0i64; 3];
        for (a, slot) in k.iter_mut().enumerate().take(D.min(3)) {
            *slot = (p[a] / eps).floor() as i64;
        }
        k
    }

    fn neighbors(&self, i: usize) -> Vec<usize> {
        let p = &self.points[i];
        let k = Self::key(p, self.eps);
        let eps2 = self.eps * self.eps;
        let span = |a: usize| if a < D { -1..=1 } else { 0..=0 };
        let mut out = Vec::new();
        for dx in span(0) {
            for dy in span(1) {
                for dz in span(2) {
                    let Some(bucket) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        let q = &self.points[j];
                        let d2: f64 = (0..D).map(|a| (p[a] - q[a]).powi(2)).sum();
                        if d2 <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Density-based clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters are numbered from 0 in scan
/// order; unreachable points get [`NOISE`].
pub fn dbscan<const D: usize>(points: &[[f64; D]], eps: f64, min_pts: usize) -> Vec<i64> {
    const UNSEEN: i64 = i64::MIN;
    let grid = Grid::new(points, eps);
    let mut labels = vec![UNSEEN; points.len()];
    let mut next = 0i64;
    for i in 0..points.len() {
        if labels[i] != UNSEEN {
            continue;
        }
        let nbrs = grid.neighbors(i);
        if nbrs.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = cluster;
        let mut stack: Vec<usize> = nbrs;
        while let Some(j) = stack.pop() {
            if labels[j] == NOISE {
                labels[j] = cluster;
            }
            if labels[j] != UNSEEN {
                continue;
            }
            labels[j] = cluster;
            let nj = grid.neighbors(j);
            if nj.len() >= min_pts {
                stack.extend(nj.into_iter().filter(|&k| labels[k] == UNSEEN || labels[k] == NOISE));
            }
        }
    }
    labels
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull, collinear points dropped.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle of the BEV footprint plus the z extent.
/// The longer rectangle side becomes the length.
pub fn fit_box_from_cluster(points: &[Point3D], class_id: u32) -> Result<Box3D> {
    let bev: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    let hull = convex_hull(&bev);
    let degenerate = || Error::DegenerateCluster(format!("{} points with collinear footprint", points.len()));
    if hull.len() < 3 {
        return Err(degenerate());
    }
    let mut best: Option<(f64, f64, f64, f64, f64, f64)> = None;
    for k in 0..hull.len() {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        if len == 0.0 {
            continue;
        }
        let (ux, uy) = ((b.0 - a.0) / len, (b.1 - a.1) / len);
        let (mut s_lo, mut s_hi, mut t_lo, mut t_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in &hull {
            let s = x * ux + y * uy;
            let t = -x * uy + y * ux;
            s_lo = s_lo.min(s);
            s_hi = s_hi.max(s);
            t_lo = t_lo.min(t);
            t_hi = t_hi.max(t);
        }
        let area = (s_hi - s_lo) * (t_hi - t_lo);
        if best.is_none_or(|b| area < b.0) {
            best = Some((area, uy.atan2(ux), s_lo, s_hi, t_lo, t_hi));
        }
    }
    let (area, angle, s_lo, s_hi, t_lo, t_hi) = best.ok_or_else(degenerate)?;
    if area <= 0.0 {
        return Err(degenerate());
    }
    let (sin, cos) = angle.sin_cos();
    let (sm, tm) = ((s_lo + s_hi) / 2.0, (t_lo + t_hi) / 2.0);
    let cx = sm * cos - tm * sin;
    let cy = sm * sin + tm * cos;
    let (ds, dt) = (s_hi - s_lo, t_hi - t_lo);
    let (l, w, yaw) = if ds >= dt {
        (ds, dt, angle)
    } else {
        (dt, ds, angle + std::f64::consts::FRAC_PI_2)
    };
    let z_lo = points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let z_hi = points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let h = (z_hi - z_lo).max(1e-6);
    Box3D::new(Point3D::new(cx, cy, (z_lo + z_hi) / 2.0), [w, l, h], yaw, class_id, 1.0)
}

/// Clusters points in `(x, y, z, weight·label)` space and fits one box per
/// cluster, labelled by the cluster's majority class. Points with negative
/// labels are ignored.
pub fn cluster_proposals(points: &[Point3D], labels: &[i64], cfg: &ClusterConfig) -> Result<Vec<Box3D>> {
    if points.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let kept: Vec<usize> = (0..points.len()).filter(|&i| labels[i] >= 0).collect();
    let features: Vec<[f64; 4]> = kept
        .iter()
        .map(|&i| {
            let p = points[i];
            [p.x, p.y, p.z, cfg.label_weight * labels[i] as f64]
        })
        .collect();
    let assignment = dbscan(&features, cfg.eps, cfg.min_pts);
    let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (k, &c) in assignment.iter().enumerate() {
        if c != NOISE {
            members.entry(c).or_default().push(kept[k]);
        }
    }
    let mut out = Vec::new();
    for (c, idx) in members {
        let mut votes: BTreeMap<i64, usize> = BTreeMap::new();
        for &i in &idx {
            *votes.entry(labels[i]).or_default() += 1;
        }
        let label = votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(l, _)| *l)
            .expect("cluster is non-empty");
        let pts: Vec<Point3D> = idx.iter().map(|&i| points[i]).collect();
        match fit_box_from_cluster(&pts, label as u32) {
            Ok(b) => out.push(b),
            Err(e) => log::debug!("cluster {c} skipped: {e}"),
        }
    }
    Ok(out)
}
