//! Iterative self-training: augment scenes from the memory bank, train a
//! detector on seeker proposals plus pseudo labels, harvest its confident
//! novel predictions back into the label set and the bank.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::match_boxes;
use crate::geometry::nms;
use crate::io::Scene;
use crate::propagator::{
    bank_update, combine_sources, filter_overlap_with_base, filter_quality, geometry_simulate, harvest,
    BankUpdateReport, FilterConfig, MemoryBank, PasteStats, SimulatorConfig,
};
use crate::seeding::{derive_seed, hash_str};
use crate::Box3D;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub n_rounds: usize,
    pub pseudo_score_threshold: f64,
    pub enable_loss_norm: bool,
    pub loss_alpha: f64,
    pub ema_momentum: f64,
    pub bank_capacity: usize,
    pub seed: u64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            n_rounds: 3,
            pseudo_score_threshold: 0.6,
            enable_loss_norm: true,
            loss_alpha: 0.5,
            ema_momentum: 0.99,
            bank_capacity: 60,
            seed: 0,
        }
    }
}

/// Per-iteration `(base loss, novel loss)` pairs reported by a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    pub loss_pairs: Vec<(f64, f64)>,
}

/// The 3D detector being self-trained.
///
/// Training scenes carry base annotations in `base_gt` and the current
/// novel labels in `novel_gt`.
pub trait DetectorPort {
    fn fit(&mut self, scenes: &[Scene]) -> Result<TrainingReport>;
    fn predict(&self, scene: &Scene) -> Result<Vec<Box3D>>;
}

/// EMA state for rebalancing the novel-class loss against the base loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaLossNormalizer {
    pub alpha: f64,
    pub momentum: f64,
    pub ema_base: Option<f64>,
    pub ema_novel: Option<f64>,
}

impl EmaLossNormalizer {
    pub fn new(alpha: f64, momentum: f64) -> Self {
        EmaLossNormalizer {
            alpha,
            momentum,
            ema_base: None,
            ema_novel: None,
        }
    }
}

/// `(L_B + α·(ē_B/ē_N)·L_N) / (1 + α)` with the EMAs from before this step.
///
/// The first observation seeds both EMAs. With `α = 0` the base loss is
/// returned unchanged and the state is still advanced.
pub fn normalize_loss(l_base: f64, l_novel: f64, state: &EmaLossNormalizer) -> Result<(f64, EmaLossNormalizer)> {
    let e_b = state.ema_base.unwrap_or(l_base);
    let e_n = state.ema_novel.unwrap_or(l_novel);
    let m = state.momentum;
    let next = EmaLossNormalizer {
        ema_base: Some(m * e_b + (1.0 - m) * l_base),
        ema_novel: Some(m * e_n + (1.0 - m) * l_novel),
        ..*state
    };
    if state.alpha == 0.0 {
        return Ok((l_base, next));
    }
    if e_n.abs() < 1e-12 {
        return Err(Error::DegenerateEma(e_n));
    }
    let a = state.alpha;
    Ok(((l_base + a * (e_b / e_n) * l_novel) / (1.0 + a), next))
}

/// Stand-in detector that perturbs the annotations it is asked about.
///
/// Each annotated object has a fixed visibility draw; it is reported once
/// `miss_rate · decay^fitted_rounds` falls below that draw, and only for
/// classes that appeared in the training labels. Reported boxes carry
/// Gaussian pose noise and a score that falls with the position error.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyOracleDetector {
    pub noise_sigma: f64,
    pub yaw_sigma: f64,
    pub miss_rate: f64,
    pub decay: f64,
    pub seed: u64,
    pub include_base: bool,
    pub fitted_rounds: u64,
    pub known_classes: BTreeSet<u32>,
}

impl NoisyOracleDetector {
    pub fn new(seed: u64) -> Self {
        NoisyOracleDetector {
            noise_sigma: 0.3,
            yaw_sigma: 0.05,
            miss_rate: 0.6,
            decay: 0.6,
            seed,
            include_base: false,
            fitted_rounds: 0,
            known_classes: BTreeSet::new(),
        }
    }

    fn miss_probability(&self) -> f64 {
        self.miss_rate * self.decay.powi(self.fitted_rounds.min(i32::MAX as u64) as i32)
    }
}

impl DetectorPort for NoisyOracleDetector {
    fn fit(&mut self, scenes: &[Scene]) -> Result<TrainingReport> {
        for s in scenes {
            self.known_classes.extend(s.novel_gt.iter().map(|b| b.class_id));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.fitted_rounds, u64::MAX]));
        let r = self.fitted_rounds as f64;
        let loss_pairs = (0..scenes.len().max(1))
            .map(|i| {
                let t = r + i as f64 / scenes.len().max(1) as f64;
                let base = 1.0 / (1.0 + t) + 0.05 * rng.random::<f64>();
                let novel = 3.0 / (1.0 + 0.5 * t) + 0.05 * rng.random::<f64>();
                (base, novel)
            })
            .collect();
        self.fitted_rounds += 1;
        Ok(TrainingReport { loss_pairs })
    }

    fn predict(&self, scene: &Scene) -> Result<Vec<Box3D>> {
        let pos = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::Detector(e.to_string()))?;
        let yaw = Normal::new(0.0, self.yaw_sigma).map_err(|e| Error::Detector(e.to_string()))?;
        let scene_key = hash_str(&scene.scene_id);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[self.fitted_rounds, scene_key]));
        let miss = self.miss_probability();
        let base: &[Box3D] = if self.include_base { &scene.base_gt } else { &[] };
        let mut out = Vec::new();
        for (k, gt) in base.iter().chain(&scene.novel_gt).enumerate() {
            let novel = k >= base.len();
            if novel && !self.known_classes.contains(&gt.class_id) {
                continue;
            }
            let mut vis = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[scene_key, k as u64]));
            let draw: f64 = vis.random();
            let dx = pos.sample(&mut noise_rng);
            let dy = pos.sample(&mut noise_rng);
            let dyaw = yaw.sample(&mut noise_rng);
            if novel && draw < miss {
                continue;
            }
            let mut b = gt.with_yaw(gt.yaw + dyaw);
            b.center.x += dx;
            b.center.y += dy;
            b.score = (1.0 - dx.hypot(dy) / 2.0).clamp(0.0, 1.0);
            out.push(b);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub mean_loss: f64,
    pub pasted: usize,
    pub paste_exhausted: usize,
    pub predictions: usize,
    pub accepted_pseudo: usize,
    pub pseudo_labels: usize,
    pub pseudo_recall: Option<f64>,
    pub pseudo_precision: Option<f64>,
    pub bank_size: usize,
    pub bank_mean_confidence: Option<f64>,
    pub bank_update: BankUpdateReport,
}

/// Distance used to score pseudo labels against held-out novel annotations.
pub const LABEL_MATCH_DIST: f64 = 2.0;

/// Drives the rounds over a fixed dataset. Scenes keep their novel
/// annotations only for reporting; training labels come from the seeker
/// proposals and accumulated pseudo labels.
pub struct SelfTrainer {
    scenes: Vec<Scene>,
    seeker_props: Vec<Vec<Box3D>>,
    novel_classes: BTreeSet<u32>,
    bank: MemoryBank,
    pseudo: Vec<Vec<Box3D>>,
    normalizer: EmaLossNormalizer,
    cfg: RoundConfig,
    sim: SimulatorConfig,
    filt: FilterConfig,
    round: usize,
}

impl SelfTrainer {
    pub fn new(
        scenes: Vec<Scene>,
        seeker_props: Vec<Vec<Box3D>>,
        novel_classes: BTreeSet<u32>,
        cfg: RoundConfig,
        sim: SimulatorConfig,
        filt: FilterConfig,
    ) -> Result<Self> {
        if scenes.len() != seeker_props.len() {
            return Err(Error::Config(format!(
                "{} scenes but {} proposal lists",
                scenes.len(),
                seeker_props.len()
            )));
        }
        let seeker_props: Vec<Vec<Box3D>> = seeker_props
            .into_iter()
            .map(|props| props.into_iter().filter(|b| novel_classes.contains(&b.class_id)).collect())
            .collect();
        let mut bank = MemoryBank::new(cfg.bank_capacity);
        for (scene, props) in scenes.iter().zip(&seeker_props) {
            let combined = combine_sources(props, &[], &scene.base_gt, &scene.cloud, &filt);
            bank_update(&mut bank, harvest(scene, &combined), &filt);
        }
        let pseudo = vec![Vec::new(); scenes.len()];
        let normalizer = EmaLossNormalizer::new(cfg.loss_alpha, cfg.ema_momentum);
        Ok(SelfTrainer {
            scenes,
            seeker_props,
            novel_classes,
            bank,
            pseudo,
            normalizer,
            cfg,
            sim,
            filt,
            round: 0,
        })
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn pseudo_labels(&self) -> &[Vec<Box3D>] {
        &self.pseudo
    }

    /// Seeker proposals merged with pseudo labels, per scene.
    pub fn labels(&self) -> Vec<Vec<Box3D>> {
        self.scenes
            .iter()
            .zip(self.seeker_props.iter().zip(&self.pseudo))
            .map(|(s, (props, pseudo))| combine_sources(props, pseudo, &s.base_gt, &s.cloud, &self.filt))
            .collect()
    }

    fn label_quality(&self, labels: &[Vec<Box3D>]) -> (Option<f64>, Option<f64>) {
        let (mut tp_gt, mut n_gt, mut tp_pred, mut n_pred) = (0usize, 0usize, 0usize, 0usize);
        for (scene, labels) in self.scenes.iter().zip(labels) {
            for class_id in &self.novel_classes {
                let gts: Vec<Box3D> = scene.novel_gt.iter().filter(|b| b.class_id == *class_id).copied().collect();
                let preds: Vec<Box3D> = labels.iter().filter(|b| b.class_id == *class_id).copied().collect();
                let m = match_boxes(&preds, &gts, LABEL_MATCH_DIST);
                tp_gt += m.pairs.len();
                tp_pred += m.pairs.len();
                n_gt += gts.len();
                n_pred += preds.len();
            }
        }
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        (ratio(tp_gt, n_gt), ratio(tp_pred, n_pred))
    }

    pub fn run_round<D: DetectorPort + ?Sized>(&mut self, detector: &mut D) -> Result<RoundReport> {
        let round = self.round;
        let labels = self.labels();
        let mut training = Vec::with_capacity(self.scenes.len());
        let mut paste = PasteStats::default();
        for (i, (scene, labels)) in self.scenes.iter().zip(&labels).enumerate() {
            let mut view = scene.clone();
            view.novel_gt = labels.clone();
            let seed = derive_seed(self.cfg.seed, &[round as u64, i as u64]);
            let (augmented, _, stats) = geometry_simulate(&self.bank, &view, &self.sim, seed)?;
            paste.pasted += stats.pasted;
            paste.exhausted += stats.exhausted;
            training.push(augmented);
        }

        let report = detector.fit(&training)?;
        let mut losses = Vec::with_capacity(report.loss_pairs.len());
        for &(l_b, l_n) in &report.loss_pairs {
            if self.cfg.enable_loss_norm {
                let (l, next) = normalize_loss(l_b, l_n, &self.normalizer)?;
                self.normalizer = next;
                losses.push(l);
            } else {
                losses.push(l_b + l_n);
            }
        }
        let mean_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };

        let mut predictions = 0;
        let mut accepted_total = 0;
        let mut update = BankUpdateReport::default();
        for i in 0..self.scenes.len() {
            let scene = &self.scenes[i];
            let preds = detector.predict(scene)?;
            predictions += preds.len();
            let confident: Vec<Box3D> = preds
                .into_iter()
                .filter(|b| b.score >= self.cfg.pseudo_score_threshold && self.novel_classes.contains(&b.class_id))
                .collect();
            let kept = filter_overlap_with_base(&confident, &scene.base_gt, self.filt.beta_overlap);
            let accepted = filter_quality(&kept, &scene.cloud, &self.filt);
            accepted_total += accepted.len();
            let r = bank_update(&mut self.bank, harvest(scene, &accepted), &self.filt);
            update.offered += r.offered;
            update.rejected += r.rejected;
            update.inserted += r.inserted;
            update.evicted += r.evicted;
            let mut merged = std::mem::take(&mut self.pseudo[i]);
            merged.extend(accepted);
            self.pseudo[i] = nms(&merged, self.filt.nms_iou);
        }

        let labels = self.labels();
        let (pseudo_recall, pseudo_precision) = self.label_quality(&labels);
        self.round += 1;
        let out = RoundReport {
            round,
            mean_loss,
            pasted: paste.pasted,
            paste_exhausted: paste.exhausted,
            predictions,
            accepted_pseudo: accepted_total,
            pseudo_labels: labels.iter().map(Vec::len).sum(),
            pseudo_recall,
            pseudo_precision,
            bank_size: self.bank.len(),
            bank_mean_confidence: self.bank.mean_confidence(),
            bank_update: update,
        };
        log::info!(
            "round {round}: {} pseudo labels, recall {:?}, bank {} (mean conf {:?})",
            out.pseudo_labels,
            out.pseudo_recall,
            out.bank_size,
            out.bank_mean_confidence
        );
        Ok(out)
    }

    pub fn run<D: DetectorPort + ?Sized>(&mut self, detector: &mut D) -> Result<Vec<RoundReport>> {
        (0..self.cfg.n_rounds).map(|_| self.run_round(detector)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;
    use crate::Point3D;

    #[test]
    fn loss_examples() {
        let s = EmaLossNormalizer::new(0.5, 0.99);
        let (l, next) = normalize_loss(1.0, 3.0, &s).unwrap();
        // warm-up: ē_B/ē_N = 1/3, so (1 + 0.5·(1/3)·3)/1.5 = 1
        assert!((l - 1.0).abs() < 1e-15);
        assert_eq!(next.ema_base, Some(1.0));
        let primed = EmaLossNormalizer {
            ema_base: Some(1.0),
            ema_novel: Some(1.0),
            ..s
        };
        let (l, _) = normalize_loss(1.0, 3.0, &primed).unwrap();
        assert!((l - 5.0 / 3.0).abs() < 1e-15);
        let zero = EmaLossNormalizer::new(0.0, 0.99);
        assert_eq!(normalize_loss(0.7, 123.0, &zero).unwrap().0, 0.7);
        let degenerate = EmaLossNormalizer {
            ema_novel: Some(0.0),
            ema_base: Some(1.0),
            ..s
        };
        assert!(matches!(normalize_loss(1.0, 1.0, &degenerate), Err(Error::DegenerateEma(_))));
    }

    #[test]
    fn ema_update_uses_momentum() {
        let s = EmaLossNormalizer {
            alpha: 0.5,
            momentum: 0.9,
            ema_base: Some(2.0),
            ema_novel: Some(4.0),
        };
        let (_, next) = normalize_loss(1.0, 1.0, &s).unwrap();
        assert!((next.ema_base.unwrap() - 1.9).abs() < 1e-12);
        assert!((next.ema_novel.unwrap() - 3.7).abs() < 1e-12);
    }

    fn scene_with_bus() -> Scene {
        let bus = Box3D::new(Point3D::new(15.0, 4.0, 1.7), [2.9, 10.5, 3.4], 0.3, 2, 1.0).unwrap();
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..4 {
                let local = Point3D::new(-4.5 + i as f64, -1.0 + 0.6 * j as f64, 0.5);
                pts.push(crate::geometry::from_local(local, &bus));
            }
        }
        Scene {
            scene_id: "s0".into(),
            cloud: PointCloud::new(pts),
            cameras: vec![],
            base_gt: vec![],
            novel_gt: vec![bus],
        }
    }

    #[test]
    fn detector_only_reports_known_classes() {
        let scene = scene_with_bus();
        let mut det = NoisyOracleDetector::new(3);
        det.miss_rate = 0.0;
        assert!(det.predict(&scene).unwrap().is_empty());
        det.fit(std::slice::from_ref(&scene)).unwrap();
        let preds = det.predict(&scene).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds, det.predict(&scene).unwrap());
    }

    #[test]
    fn trainer_accumulates_labels() {
        let scene = scene_with_bus();
        let mut prop = scene.novel_gt[0];
        prop.score = 0.7;
        let cfg = RoundConfig {
            bank_capacity: 4,
            ..RoundConfig::default()
        };
        let sim = SimulatorConfig {
            n_paste: 1,
            ..SimulatorConfig::default()
        };
        let mut trainer = SelfTrainer::new(
            vec![scene],
            vec![vec![prop]],
            BTreeSet::from([2]),
            cfg,
            sim,
            FilterConfig::default(),
        )
        .unwrap();
        assert_eq!(trainer.bank().len(), 1);
        let mut det = NoisyOracleDetector::new(1);
        det.noise_sigma = 0.0;
        det.miss_rate = 0.0;
        let reports = trainer.run(&mut det).unwrap();
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[0].pseudo_recall, Some(1.0));
        assert!(reports.iter().all(|r| r.mean_loss.is_finite()));
    }
}
