//! Procedural driving scenes: boxes on a ground plane, a surround camera rig,
//! a LiDAR sweep with range falloff and occlusion, and noisy 2D detections.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_3, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_bev, project_box, project_box_unclamped, to_local, Camera, PointCloud};
use crate::io::{AnchorTable, ClassEntry, Detection2D, Scene, Vocabulary};
use crate::seeding::derive_seed;
use crate::{Box2D, Box3D, CameraModel, Point3D};

/// `(id, name, [w, l, h])`
const BASE: [(u32, &str, [f64; 3]); 2] = [(0, "car", [1.97, 4.63, 1.74]), (1, "truck", [2.51, 6.93, 2.84])];
const NOVEL: [(u32, &str, [f64; 3]); 4] = [
    (2, "bus", [2.94, 10.5, 3.47]),
    (3, "construction_vehicle", [2.85, 6.37, 3.19]),
    (4, "motorcycle", [0.77, 2.11, 1.47]),
    (5, "bicycle", [0.60, 1.70, 1.28]),
];

pub fn default_vocabulary() -> Vocabulary {
    let entries = |t: &[(u32, &str, [f64; 3])]| {
        t.iter()
            .map(|(id, name, _)| ClassEntry {
                id: *id,
                name: (*name).to_owned(),
            })
            .collect()
    };
    Vocabulary {
        base_classes: entries(&BASE),
        novel_classes: entries(&NOVEL),
    }
}

pub fn default_anchors() -> AnchorTable {
    AnchorTable(BASE.iter().chain(&NOVEL).map(|(id, _, size)| (*id, *size)).collect())
}

pub const LIDAR_ORIGIN: Point3D = Point3D {
    x: 0.0,
    y: 0.0,
    z: 1.8,
};

/// Six level cameras at 60° spacing around the ego vehicle.
pub fn default_rig() -> Vec<CameraModel> {
    let names = ["front", "front_left", "back_left", "back", "back_right", "front_right"];
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let yaw = crate::normalize_angle(k as f64 * FRAC_PI_3);
            Camera::looking_along(
                *name,
                yaw,
                Point3D::new(0.0, 0.0, 1.6),
                1000.0,
                1000.0,
                800.0,
                450.0,
                1600.0,
                900.0,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub base_objects: (usize, usize),
    pub novel_objects: (usize, usize),
    pub range: (f64, f64),
    /// Expected returns per square metre of visible surface at 1 m.
    pub point_density: f64,
    pub surface_noise: f64,
    pub ground_points: usize,
    pub ground_range: (f64, f64),
    /// Returns on a ring of facades beyond the placement area.
    pub background_points: usize,
    pub background_radius: (f64, f64),
    pub background_height: f64,
    pub clutter_blobs: usize,
    pub clutter_points: usize,
    pub size_jitter: f64,
    pub det_miss_rate: f64,
    pub det_misclass_rate: f64,
    /// Corner jitter as a fraction of the box side.
    pub det_jitter: f64,
    pub det_score: (f64, f64),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must lie in [0, 1], got {v}")))
            }
        };
        prob("det_miss_rate", self.det_miss_rate)?;
        prob("det_misclass_rate", self.det_misclass_rate)?;
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo > 0.0 && lo < hi && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must be a positive increasing range")))
            }
        };
        ordered("range", self.range)?;
        ordered("ground_range", self.ground_range)?;
        ordered("background_radius", self.background_radius)?;
        if self.base_objects.0 > self.base_objects.1 || self.novel_objects.0 > self.novel_objects.1 {
            return Err(Error::Config("object count ranges must be ordered".into()));
        }
        if !(self.det_score.0 >= 0.0 && self.det_score.0 <= self.det_score.1 && self.det_score.1 <= 1.0) {
            return Err(Error::Config("`det_score` must be an ordered range within [0, 1]".into()));
        }
        if !(self.point_density > 0.0 && self.surface_noise >= 0.0 && self.det_jitter >= 0.0 && self.size_jitter >= 0.0)
        {
            return Err(Error::Config("densities and jitters must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            base_objects: (4, 8),
            novel_objects: (4, 7),
            range: (5.0, 45.0),
            point_density: 4000.0,
            surface_noise: 0.02,
            ground_points: 20_000,
            ground_range: (3.0, 60.0),
            background_points: 6000,
            background_radius: (50.0, 60.0),
            background_height: 12.0,
            clutter_blobs: 15,
            clutter_points: 60,
            size_jitter: 0.05,
            det_miss_rate: 0.05,
            det_misclass_rate: 0.03,
            det_jitter: 0.02,
            det_score: (0.4, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene: Scene,
    pub detections: Vec<Detection2D>,
}

/// True when the segment `a -> b` passes through `bbox` before reaching `b`.
pub fn segment_hits_box(a: Point3D, b: Point3D, bbox: &Box3D) -> bool {
    let p = to_local(a, bbox);
    let q = to_local(b, bbox);
    let d = [q.x - p.x, q.y - p.y, q.z - p.z];
    let o = [p.x, p.y, p.z];
    let half = [bbox.l * 0.5, bbox.w * 0.5, bbox.h * 0.5];
    let (mut t0, mut t1) = (0.0f64, 1.0f64 - 1e-6);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > half[k] {
                return false;
            }
            continue;
        }
        let ta = (-half[k] - o[k]) / d[k];
        let tb = (half[k] - o[k]) / d[k];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
        if t0 > t1 {
            return false;
        }
    }
    true
}

const PLACE_ATTEMPTS: usize = 200;

fn place_objects<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<Vec<Box3D>> {
    let n_base = rng.random_range(cfg.base_objects.0..=cfg.base_objects.1);
    let n_novel = rng.random_range(cfg.novel_objects.0..=cfg.novel_objects.1);
    let mut wanted: Vec<(u32, [f64; 3])> = Vec::new();
    for _ in 0..n_novel {
        let (id, _, size) = NOVEL[rng.random_range(0..NOVEL.len())];
        wanted.push((id, size));
    }
    for _ in 0..n_base {
        let (id, _, size) = BASE[rng.random_range(0..BASE.len())];
        wanted.push((id, size));
    }
    let mut placed: Vec<Box3D> = Vec::new();
    let mut padded: Vec<Box3D> = Vec::new();
    for (class_id, size) in wanted {
        let mut done = false;
        for _ in 0..PLACE_ATTEMPTS {
            let r = rng.random_range(cfg.range.0..cfg.range.1);
            let phi = rng.random_range(-PI..PI);
            let yaw = rng.random_range(-PI..PI);
            let s = 1.0 + rng.random_range(-cfg.size_jitter..=cfg.size_jitter);
            let [w, l, h] = size.map(|v| v * s);
            let center = Point3D::new(r * phi.cos(), r * phi.sin(), h / 2.0);
            let Ok(b) = Box3D::new(center, [w, l, h], yaw, class_id, 1.0) else {
                continue;
            };
            let pad = Box3D { w: w + 1.0, l: l + 1.0, ..b };
            if padded.iter().all(|o| iou_bev(o, &pad) == 0.0) {
                placed.push(b);
                padded.push(pad);
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::PlacementExhausted {
                attempts: PLACE_ATTEMPTS,
            });
        }
    }
    Ok(placed)
}

/// Returns on the sensor-facing sides and top of `bbox`.
fn surface_points<R: Rng>(bbox: &Box3D, cfg: &SynthConfig, rng: &mut R) -> Vec<Point3D> {
    let noise = Normal::new(0.0, cfg.surface_noise.max(1e-12)).expect("finite sigma");
    let (hl, hw, hh) = (bbox.l / 2.0, bbox.w / 2.0, bbox.h / 2.0);
    // (normal axis, sign, extents along the two in-face axes)
    let faces: [(usize, f64); 5] = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0)];
    let sensor = to_local(LIDAR_ORIGIN, bbox);
    let half = [hl, hw, hh];
    let mut out = Vec::new();
    for (axis, sign) in faces {
        let s = [sensor.x, sensor.y, sensor.z];
        if (s[axis] - sign * half[axis]) * sign <= 0.0 {
            continue;
        }
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        let area = 4.0 * half[others[0]] * half[others[1]];
        let mut centre = [0.0; 3];
        centre[axis] = sign * half[axis];
        let c = crate::geometry::from_local(Point3D::new(centre[0], centre[1], centre[2]), bbox);
        let range2 = (c.x - LIDAR_ORIGIN.x).powi(2) + (c.y - LIDAR_ORIGIN.y).powi(2) + (c.z - LIDAR_ORIGIN.z).powi(2);
        let expected = cfg.point_density * area / range2.max(1.0);
        let n = expected.floor() as usize + usize::from(rng.random::<f64>() < expected.fract());
        for _ in 0..n {
            let mut q = [0.0; 3];
            q[axis] = sign * half[axis] + noise.sample(rng);
            for &a in &others {
                q[a] = rng.random_range(-half[a]..=half[a]);
            }
            out.push(crate::geometry::from_local(Point3D::new(q[0], q[1], q[2]), bbox));
        }
    }
    out
}

fn visible_from(origin: Point3D, target: Point3D, boxes: &[Box3D], skip: Option<usize>) -> bool {
    !boxes
        .iter()
        .enumerate()
        .any(|(k, b)| Some(k) != skip && segment_hits_box(origin, target, b))
}

fn jitter_box<R: Rng>(b: &Box2D, frac: f64, rect: &Box2D, rng: &mut R) -> Option<Box2D> {
    if frac <= 0.0 {
        return Some(*b);
    }
    let su = Normal::new(0.0, frac * b.width()).ok()?;
    let sv = Normal::new(0.0, frac * b.height()).ok()?;
    let u0 = (b.u_min + su.sample(rng)).clamp(rect.u_min, rect.u_max);
    let u1 = (b.u_max + su.sample(rng)).clamp(rect.u_min, rect.u_max);
    let v0 = (b.v_min + sv.sample(rng)).clamp(rect.v_min, rect.v_max);
    let v1 = (b.v_max + sv.sample(rng)).clamp(rect.v_min, rect.v_max);
    (u1 > u0 && v1 > v0).then_some(Box2D {
        u_min: u0,
        v_min: v0,
        u_max: u1,
        v_max: v1,
    })
}

/// Cameras whose image overlaps the projection of `bbox`, ignoring occlusion.
pub fn visibility(cameras: &[CameraModel], bbox: &Box3D) -> Vec<String> {
    cameras
        .iter()
        .filter(|cam| {
            project_box_unclamped(bbox, cam)
                .map(|b| b.intersection(&cam.image_rect()) > 0.0)
                .unwrap_or(false)
        })
        .map(|cam| cam.camera_id.clone())
        .collect()
}

fn detect<R: Rng>(boxes: &[Box3D], cameras: &[CameraModel], cfg: &SynthConfig, rng: &mut R) -> Vec<Detection2D> {
    let all_ids: Vec<u32> = BASE.iter().chain(&NOVEL).map(|c| c.0).collect();
    let mut out = Vec::new();
    for (k, b) in boxes.iter().enumerate() {
        for camera_id in visibility(cameras, b) {
            let cam = cameras.iter().find(|c| c.camera_id == camera_id).expect("listed camera");
            if !visible_from(cam.center(), b.center, boxes, Some(k)) {
                continue;
            }
            let Ok(full) = project_box(b, cam) else {
                continue;
            };
            if rng.random::<f64>() < cfg.det_miss_rate {
                continue;
            }
            let Some(bbox) = jitter_box(&full, cfg.det_jitter, &cam.image_rect(), rng) else {
                continue;
            };
            let class_id = if rng.random::<f64>() < cfg.det_misclass_rate {
                all_ids[rng.random_range(0..all_ids.len())]
            } else {
                b.class_id
            };
            out.push(Detection2D {
                camera_id,
                class_id,
                score: rng.random_range(cfg.det_score.0..=cfg.det_score.1),
                bbox,
            });
        }
    }
    out
}

/// One scene, fully determined by `seed`.
pub fn generate_scene(cfg: &SynthConfig, scene_id: impl Into<String>, seed: u64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = place_objects(cfg, &mut rng)?;
    let mut points = Vec::new();
    for (k, b) in boxes.iter().enumerate() {
        let surface = surface_points(b, cfg, &mut rng);
        points.extend(surface.into_iter().filter(|p| visible_from(LIDAR_ORIGIN, *p, &boxes, Some(k))));
    }
    let ground_noise = Normal::new(0.0, 0.02).expect("finite sigma");
    let (g_lo, g_hi) = (cfg.ground_range.0.ln(), cfg.ground_range.1.ln());
    for _ in 0..cfg.ground_points {
        let r = rng.random_range(g_lo..g_hi).exp();
        let phi = rng.random_range(-PI..PI);
        let p = Point3D::new(r * phi.cos(), r * phi.sin(), ground_noise.sample(&mut rng));
        if visible_from(LIDAR_ORIGIN, p, &boxes, None) {
            points.push(p);
        }
    }
    for _ in 0..cfg.background_points {
        let r = rng.random_range(cfg.background_radius.0..=cfg.background_radius.1);
        let phi = rng.random_range(-PI..PI);
        let p = Point3D::new(r * phi.cos(), r * phi.sin(), rng.random_range(0.0..=cfg.background_height));
        if visible_from(LIDAR_ORIGIN, p, &boxes, None) {
            points.push(p);
        }
    }
    let blob = Normal::new(0.0, 0.3).expect("finite sigma");
    for _ in 0..cfg.clutter_blobs {
        let r = rng.random_range(cfg.range.0..cfg.range.1);
        let phi = rng.random_range(-PI..PI);
        let c = Point3D::new(r * phi.cos(), r * phi.sin(), 0.6);
        if boxes.iter().any(|b| b.center.bev_distance(&c) < b.bev_radius() + 1.5) {
            continue;
        }
        for _ in 0..cfg.clutter_points {
            let p = Point3D::new(
                c.x + blob.sample(&mut rng),
                c.y + blob.sample(&mut rng),
                (c.z + blob.sample(&mut rng)).max(0.0),
            );
            if visible_from(LIDAR_ORIGIN, p, &boxes, None) {
                points.push(p);
            }
        }
    }
    let cameras = default_rig();
    let detections = detect(&boxes, &cameras, cfg, &mut rng);
    let (novel_gt, base_gt): (Vec<Box3D>, Vec<Box3D>) =
        boxes.into_iter().partition(|b| NOVEL.iter().any(|c| c.0 == b.class_id));
    Ok(SyntheticScene {
        scene: Scene {
            scene_id: scene_id.into(),
            cloud: PointCloud::new(points),
            cameras,
            base_gt,
            novel_gt,
        },
        detections,
    })
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// `n` scenes in parallel; identical for a given `seed` regardless of thread count.
pub fn generate_dataset(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Vec<SyntheticScene>> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_scene(cfg, scene_id(i), derive_seed(seed, &[i as u64])))
        .collect()
}

/// Per-class count of annotated objects, handy for summaries.
pub fn class_histogram(scenes: &[SyntheticScene]) -> BTreeMap<u32, usize> {
    let mut h = BTreeMap::new();
    for s in scenes {
        for b in s.scene.base_gt.iter().chain(&s.scene.novel_gt) {
            *h.entry(b.class_id).or_default() += 1;
        }
    }
    h
}
