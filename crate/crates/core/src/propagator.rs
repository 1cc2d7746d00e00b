//! Memory bank of discovered instances, the copy-paste simulators that move
//! them to new poses and sparser densities, and the filters that reconcile
//! proposals from different sources.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{from_local, in_box, iou_bev, nms, to_local};
use crate::io::{BoxRecord, Scene};
use crate::{Box3D, Cloud, Point3D};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorConfig {
    pub n_paste: usize,
    pub sigma_xyz: f64,
    pub sigma_theta: f64,
    pub p_drop: f64,
    pub max_place_attempts: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            n_paste: 8,
            sigma_xyz: 1.0,
            sigma_theta: std::f64::consts::FRAC_PI_4,
            p_drop: 0.2,
            max_place_attempts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub beta_overlap: f64,
    pub min_points: usize,
    pub min_ego_distance: f64,
    pub nms_iou: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            beta_overlap: 0.1,
            min_points: 5,
            min_ego_distance: 2.0,
            nms_iou: 0.2,
        }
    }
}

/// A harvested instance: its box and the points it contained, in box coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub bbox: Box3D,
    pub local_points: Vec<Point3D>,
    pub confidence: f64,
}

/// Class-wise queues of the most confident instances seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    queues: BTreeMap<u32, Vec<BankEntry>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankUpdateReport {
    pub offered: usize,
    pub rejected: usize,
    pub inserted: usize,
    pub evicted: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        MemoryBank {
            capacity,
            queues: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn queue(&self, class_id: u32) -> &[BankEntry] {
        self.queues.get(&class_id).map_or(&[], Vec::as_slice)
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.queues.iter().filter(|(_, q)| !q.is_empty()).map(|(c, _)| *c)
    }

    pub fn len(&self) -> usize {
        self.queues.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.queues.values().flatten()
    }

    pub fn mean_confidence(&self) -> Option<f64> {
        let n = self.len();
        (n > 0).then(|| self.entries().map(|e| e.confidence).sum::<f64>() / n as f64)
    }

    /// Inserts one entry keeping the queue sorted by descending confidence.
    /// Equal confidences keep arrival order. Returns the evicted entry, if any.
    fn insert(&mut self, entry: BankEntry) -> Option<BankEntry> {
        let queue = self.queues.entry(entry.bbox.class_id).or_default();
        let pos = queue.partition_point(|e| e.confidence >= entry.confidence);
        queue.insert(pos, entry);
        (queue.len() > self.capacity).then(|| queue.pop().expect("non-empty queue"))
    }
}

/// Quality-filters `entries` and merges the survivors into the bank.
pub fn bank_update(bank: &mut MemoryBank, entries: Vec<BankEntry>, cfg: &FilterConfig) -> BankUpdateReport {
    let mut report = BankUpdateReport {
        offered: entries.len(),
        ..BankUpdateReport::default()
    };
    for entry in entries {
        let too_sparse = entry.local_points.len() < cfg.min_points || entry.local_points.is_empty();
        let too_close = entry.bbox.center.bev_norm() < cfg.min_ego_distance;
        if too_sparse || too_close || !(0.0..=1.0).contains(&entry.confidence) {
            report.rejected += 1;
            continue;
        }
        report.inserted += 1;
        if bank.insert(entry).is_some() {
            report.evicted += 1;
        }
    }
    report
}

/// Cuts every proposal's points out of the scene, in box coordinates.
pub fn harvest(scene: &Scene, proposals: &[Box3D]) -> Vec<BankEntry> {
    proposals
        .iter()
        .map(|b| {
            let half = [b.l * 0.5, b.w * 0.5, b.h * 0.5];
            let local_points = scene
                .cloud
                .points
                .iter()
                .map(|p| to_local(*p, b))
                .filter(|q| q.x.abs() <= half[0] && q.y.abs() <= half[1] && q.z.abs() <= half[2])
                .collect();
            BankEntry {
                bbox: *b,
                local_points,
                confidence: b.score,
            }
        })
        .collect()
}

/// Drops novel boxes whose best BEV IoU with any base box exceeds `beta`.
pub fn filter_overlap_with_base(novels: &[Box3D], base_gt: &[Box3D], beta: f64) -> Vec<Box3D> {
    novels
        .iter()
        .filter(|n| {
            let worst = base_gt.iter().map(|b| iou_bev(b, n)).fold(0.0, f64::max);
            worst <= beta
        })
        .copied()
        .collect()
}

/// Drops boxes with too few points or too close to the ego vehicle.
pub fn filter_quality(boxes: &[Box3D], cloud: &Cloud, cfg: &FilterConfig) -> Vec<Box3D> {
    boxes
        .iter()
        .filter(|b| {
            if b.center.bev_norm() < cfg.min_ego_distance {
                return false;
            }
            let mut count = 0;
            for p in &cloud.points {
                if in_box(*p, b) {
                    count += 1;
                    if count >= cfg.min_points {
                        return true;
                    }
                }
            }
            count >= cfg.min_points
        })
        .copied()
        .collect()
}

/// Merges frustum proposals with self-training pseudo-labels.
///
/// Frustum proposals go first so that they win score ties in NMS.
pub fn combine_sources(
    seeker_props: &[Box3D],
    pseudo_boxes: &[Box3D],
    base_gt: &[Box3D],
    cloud: &Cloud,
    cfg: &FilterConfig,
) -> Vec<Box3D> {
    let all: Vec<Box3D> = seeker_props.iter().chain(pseudo_boxes).copied().collect();
    let clean = filter_overlap_with_base(&all, base_gt, cfg.beta_overlap);
    let kept = nms(&clean, cfg.nms_iou);
    filter_quality(&kept, cloud, cfg)
}

/// With probability `p_drop`, removes a uniform number of points in
/// `[0, floor(N/2)]`, chosen uniformly without replacement. Order is kept.
pub fn density_simulate<R: Rng + ?Sized>(points: &[Point3D], p_drop: f64, rng: &mut R) -> Vec<Point3D> {
    let n = points.len();
    if n == 0 || !rng.random_bool(p_drop.clamp(0.0, 1.0)) {
        return points.to_vec();
    }
    let n_drop = rng.random_range(0..=n / 2);
    let mut keep = vec![true; n];
    for i in sample(rng, n, n_drop).iter() {
        keep[i] = false;
    }
    points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasteStats {
    pub requested: usize,
    pub pasted: usize,
    pub exhausted: usize,
    pub points_added: usize,
    pub points_removed: usize,
}

fn collides(candidate: &Box3D, occupied: &[Box3D]) -> bool {
    occupied.iter().any(|o| iou_bev(o, candidate) > 0.0)
}

/// Tries to place one bank entry with pose noise; `None` when every attempt collides.
fn place<R: Rng + ?Sized>(
    entry: &BankEntry,
    occupied: &[Box3D],
    cfg: &SimulatorConfig,
    rng: &mut R,
) -> Result<Box3D> {
    let pos_noise = Normal::new(0.0, cfg.sigma_xyz).map_err(|e| Error::Config(e.to_string()))?;
    let yaw_noise = Normal::new(0.0, cfg.sigma_theta).map_err(|e| Error::Config(e.to_string()))?;
    let attempts = cfg.max_place_attempts.max(1);
    for _ in 0..attempts {
        let dx = pos_noise.sample(rng);
        let dy = pos_noise.sample(rng);
        let dyaw = yaw_noise.sample(rng);
        let mut candidate = entry.bbox;
        candidate.center.x += dx;
        candidate.center.y += dy;
        // height untouched: the bottom face stays where it was harvested
        candidate = candidate.with_yaw(entry.bbox.yaw + dyaw);
        candidate.score = entry.confidence;
        if !collides(&candidate, occupied) {
            return Ok(candidate);
        }
    }
    Err(Error::PlacementExhausted { attempts })
}

/// Pastes `n_paste` perturbed bank instances into a copy of `scene`.
///
/// Classes are drawn uniformly among non-empty queues, then an entry
/// uniformly within the queue. A placement is rejected when its footprint
/// overlaps any annotated box or an earlier paste. Scene points inside a
/// pasted box are replaced by the (possibly thinned) instance points.
/// Pasted boxes are appended to `novel_gt`.
pub fn geometry_simulate(
    bank: &MemoryBank,
    scene: &Scene,
    cfg: &SimulatorConfig,
    rng_seed: u64,
) -> Result<(Scene, Vec<Box3D>, PasteStats)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = scene.clone();
    let mut stats = PasteStats {
        requested: cfg.n_paste,
        ..PasteStats::default()
    };
    let classes: Vec<u32> = bank.classes().collect();
    if classes.is_empty() {
        log::warn!("memory bank is empty; nothing to paste into {}", scene.scene_id);
        return Ok((out, Vec::new(), stats));
    }
    let mut occupied: Vec<Box3D> = scene.base_gt.iter().chain(&scene.novel_gt).copied().collect();
    let mut pasted: Vec<(Box3D, Vec<Point3D>)> = Vec::new();
    for _ in 0..cfg.n_paste {
        let class_id = classes[rng.random_range(0..classes.len())];
        let queue = bank.queue(class_id);
        let entry = &queue[rng.random_range(0..queue.len())];
        match place(entry, &occupied, cfg, &mut rng) {
            Ok(bbox) => {
                let local = density_simulate(&entry.local_points, cfg.p_drop, &mut rng);
                let world = local.into_iter().map(|q| from_local(q, &bbox)).collect();
                occupied.push(bbox);
                pasted.push((bbox, world));
            }
            Err(e) => {
                log::debug!("paste of class {class_id} skipped: {e}");
                stats.exhausted += 1;
            }
        }
    }
    let before = out.cloud.len();
    out.cloud
        .retain_indexed(|_, p| !pasted.iter().any(|(b, _)| in_box(*p, b)));
    stats.points_removed = before - out.cloud.len();
    let mut boxes = Vec::with_capacity(pasted.len());
    for (bbox, world) in pasted {
        stats.points_added += world.len();
        out.cloud.extend_points(world);
        out.novel_gt.push(bbox);
        boxes.push(bbox);
    }
    stats.pasted = boxes.len();
    Ok((out, boxes, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankEntryRecord {
    #[serde(rename = "box")]
    pub bbox: BoxRecord,
    pub local_points: Vec<[f64; 3]>,
    pub confidence: f64,
}

/// On-disk form of a [`MemoryBank`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankRecord {
    pub capacity: usize,
    pub entries: Vec<BankEntryRecord>,
}

impl From<&MemoryBank> for BankRecord {
    fn from(bank: &MemoryBank) -> Self {
        BankRecord {
            capacity: bank.capacity,
            entries: bank
                .entries()
                .map(|e| BankEntryRecord {
                    bbox: BoxRecord::from(&e.bbox),
                    local_points: e.local_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
                    confidence: e.confidence,
                })
                .collect(),
        }
    }
}

impl BankRecord {
    /// Rebuilds the bank; entries are re-inserted so queue order is restored.
    pub fn into_bank(self) -> Result<MemoryBank> {
        let mut bank = MemoryBank::new(self.capacity);
        for rec in self.entries {
            if !(0.0..=1.0).contains(&rec.confidence) {
                return Err(Error::Format(format!("bank confidence {} outside [0, 1]", rec.confidence)));
            }
            let entry = BankEntry {
                bbox: rec.bbox.into_box()?,
                local_points: rec.local_points.iter().map(|p| Point3D::new(p[0], p[1], p[2])).collect(),
                confidence: rec.confidence,
            };
            bank.insert(entry);
        }
        Ok(bank)
    }
}

pub fn save_bank(path: &std::path::Path, bank: &MemoryBank) -> Result<()> {
    crate::io::write_json(path, &BankRecord::from(bank))
}

pub fn load_bank(path: &std::path::Path) -> Result<MemoryBank> {
    crate::io::read_json::<BankRecord>(path)?.into_bank()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, score: f64) -> Box3D {
        Box3D::new(Point3D::new(x, y, 0.8), [2.0, 4.0, 1.6], 0.0, 4, score).unwrap()
    }

    fn entry(x: f64, conf: f64, n: usize) -> BankEntry {
        BankEntry {
            bbox: bx(x, 0.0, conf),
            local_points: vec![Point3D::origin(); n],
            confidence: conf,
        }
    }

    fn empty_scene() -> Scene {
        Scene {
            scene_id: "empty".into(),
            cloud: Cloud::new(vec![]),
            cameras: vec![],
            base_gt: vec![],
            novel_gt: vec![],
        }
    }

    #[test]
    fn overlap_filter_examples() {
        let novels = vec![bx(10.0, 0.0, 0.5), bx(30.0, 0.0, 0.5)];
        assert_eq!(filter_overlap_with_base(&novels, &[], 0.1), novels);
        let kept = filter_overlap_with_base(&novels, &[bx(10.0, 0.0, 1.0)], 0.1);
        assert_eq!(kept, vec![novels[1]]);
    }

    #[test]
    fn overlap_exactly_at_threshold_is_kept() {
        // unit square against a 1 x 4.5 strip covering half of it: 0.5 / 5.0
        let base = Box3D::new(Point3D::new(0.5, 0.5, 0.5), [1.0, 1.0, 1.0], 0.0, 0, 1.0).unwrap();
        let novel = Box3D::new(Point3D::new(2.75, 0.5, 0.5), [1.0, 4.5, 1.0], 0.0, 4, 0.5).unwrap();
        assert_eq!(iou_bev(&base, &novel), 0.1);
        assert_eq!(filter_overlap_with_base(&[novel], &[base], 0.1), vec![novel]);
        let wider = Box3D::new(Point3D::new(2.7, 0.5, 0.5), [1.0, 4.6, 1.0], 0.0, 4, 0.5).unwrap();
        assert!(iou_bev(&base, &wider) > 0.1);
        assert!(filter_overlap_with_base(&[wider], &[base], 0.1).is_empty());
    }

    #[test]
    fn quality_filter_examples() {
        let cfg = FilterConfig::default();
        let far = bx(10.0, 0.0, 0.5);
        let cloud = Cloud::new(vec![far.center; 5]);
        assert_eq!(filter_quality(&[far], &cloud, &cfg), vec![far]);
        assert!(filter_quality(&[far], &Cloud::new(vec![]), &cfg).is_empty());
        let at_origin = bx(0.0, 0.0, 0.5);
        let cloud = Cloud::new(vec![at_origin.center; 50]);
        assert!(filter_quality(&[at_origin], &cloud, &cfg).is_empty());
    }

    #[test]
    fn harvest_round_trips_points() {
        let b = Box3D::new(Point3D::new(8.0, -3.0, 0.8), [2.0, 4.0, 1.6], 0.7, 4, 0.9).unwrap();
        let pts = vec![
            Point3D::new(8.1, -3.2, 0.5),
            Point3D::new(9.0, -2.5, 1.2),
            Point3D::new(30.0, 0.0, 0.0),
        ];
        let scene = Scene {
            cloud: Cloud::new(pts.clone()),
            ..empty_scene()
        };
        let entries = harvest(&scene, &[b]);
        assert_eq!(entries[0].local_points.len(), 2);
        assert_eq!(entries[0].confidence, 0.9);
        for (q, p) in entries[0].local_points.iter().zip(&pts) {
            assert!((from_local(*q, &b) - *p).norm() < 1e-9);
        }
        let empty = harvest(&scene, &[bx(-30.0, 0.0, 0.4)]);
        assert!(empty[0].local_points.is_empty());
        let all = harvest(&Scene { cloud: Cloud::new(vec![b.center; 4]), ..empty_scene() }, &[b]);
        assert_eq!(all[0].local_points.len(), 4);
    }

    #[test]
    fn bank_keeps_most_confident() {
        let cfg = FilterConfig::default();
        let mut bank = MemoryBank::new(1);
        bank_update(&mut bank, vec![entry(10.0, 0.5, 10)], &cfg);
        assert_eq!(bank.len(), 1);
        let report = bank_update(&mut bank, vec![entry(12.0, 0.9, 10)], &cfg);
        assert_eq!(report.evicted, 1);
        assert_eq!(bank.queue(4)[0].confidence, 0.9);
        let report = bank_update(&mut bank, vec![entry(12.0, 0.95, 1), entry(0.5, 0.99, 10)], &cfg);
        assert_eq!(report.rejected, 2);
        assert_eq!(bank.queue(4)[0].confidence, 0.9);
    }

    #[test]
    fn density_simulate_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3D> = (0..100).map(|i| Point3D::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(density_simulate(&pts, 0.0, &mut rng), pts);
        assert!(density_simulate(&[], 1.0, &mut rng).is_empty());
        for _ in 0..200 {
            let out = density_simulate(&pts, 1.0, &mut rng);
            assert!(out.len() >= 50);
            // output is an ordered subsequence of the input
            let mut it = pts.iter();
            assert!(out.iter().all(|p| it.any(|q| q == p)));
        }
    }

    #[test]
    fn zero_noise_paste_reproduces_bank_pose() {
        let mut bank = MemoryBank::new(60);
        let e = BankEntry {
            bbox: Box3D::new(Point3D::new(15.0, 4.0, 0.8), [2.0, 4.0, 1.6], 1.1, 4, 0.8).unwrap(),
            local_points: vec![Point3D::new(0.5, 0.2, -0.3), Point3D::new(-1.0, 0.9, 0.7)],
            confidence: 0.8,
        };
        bank.insert(e.clone());
        let cfg = SimulatorConfig {
            n_paste: 1,
            sigma_xyz: 0.0,
            sigma_theta: 0.0,
            p_drop: 0.0,
            max_place_attempts: 5,
        };
        let (scene, boxes, stats) = geometry_simulate(&bank, &empty_scene(), &cfg, 3).unwrap();
        assert_eq!(stats.pasted, 1);
        assert_eq!(boxes[0].center, e.bbox.center);
        assert_eq!(boxes[0].yaw, e.bbox.yaw);
        assert_eq!(scene.cloud.len(), 2);
        assert!(scene.cloud.points.iter().all(|p| in_box(*p, &boxes[0])));

        let blocked = Scene {
            base_gt: vec![e.bbox.with_score(1.0)],
            ..empty_scene()
        };
        let (_, boxes, stats) = geometry_simulate(&bank, &blocked, &cfg, 3).unwrap();
        assert!(boxes.is_empty());
        assert_eq!(stats.exhausted, 1);
    }

    #[test]
    fn bank_record_round_trip() {
        let mut bank = MemoryBank::new(3);
        bank.insert(entry(10.0, 0.4, 2));
        bank.insert(entry(20.0, 0.9, 3));
        let restored = BankRecord::from(&bank).into_bank().unwrap();
        assert_eq!(restored, bank);
    }
}
