//! Center-distance detection metrics.
//!
//! Predictions are matched to ground truth of the same class by BEV center
//! distance, greedily in descending score order. AP at one distance is the
//! area under the monotone precision envelope over recall in
//! `[min_recall, 1]`, with envelope values below `min_precision` counted as
//! zero, normalised by `1 - min_recall`. Class AP averages over the
//! distance thresholds.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Vocabulary;
use crate::Box3D;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub dist_thresholds: Vec<f64>,
    pub min_recall: f64,
    pub min_precision: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dist_thresholds: vec![0.5, 1.0, 2.0, 4.0],
            min_recall: 0.1,
            min_precision: 0.1,
        }
    }
}

impl EvalConfig {
    pub fn largest_threshold(&self) -> f64 {
        self.dist_thresholds.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    /// `(prediction index, ground-truth index)` in matching order.
    pub pairs: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

fn score_order(preds: &[Box3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| {
        preds[j]
            .score
            .partial_cmp(&preds[i].score)
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Nearest unmatched ground truth within `dist`, lowest index on ties.
fn nearest_free(pred: &Box3D, gts: &[Box3D], taken: &[bool], dist: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, gt) in gts.iter().enumerate() {
        if taken[g] {
            continue;
        }
        let d = pred.center.bev_distance(&gt.center);
        if d <= dist && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((g, d));
        }
    }
    best.map(|(g, _)| g)
}

/// Greedy center-distance matching of one class in one scene.
pub fn match_boxes(preds: &[Box3D], gts: &[Box3D], dist: f64) -> Matching {
    let mut taken = vec![false; gts.len()];
    let mut m = Matching::default();
    for i in score_order(preds) {
        match nearest_free(&preds[i], gts, &taken, dist) {
            Some(g) => {
                taken[g] = true;
                m.pairs.push((i, g));
            }
            None => m.false_positives.push(i),
        }
    }
    m.false_negatives = (0..gts.len()).filter(|g| !taken[*g]).collect();
    m
}

/// Precision/recall after each prediction, visiting predictions of all
/// scenes by descending score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub tp: usize,
    pub fp: usize,
    pub num_gt: usize,
}

/// One scene's predictions and ground truth, already restricted to a class.
pub type ScenePair<'a> = (&'a [Box3D], &'a [Box3D]);

/// Owned `(predictions, ground truth)` for one scene.
pub type LabelledScene = (Vec<Box3D>, Vec<Box3D>);

pub fn pr_curve(scenes: &[ScenePair<'_>], dist: f64) -> PrCurve {
    let mut order: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(s, (preds, _))| (0..preds.len()).map(move |i| (s, i)))
        .collect();
    order.sort_by(|&(sa, ia), &(sb, ib)| {
        scenes[sb].0[ib]
            .score
            .partial_cmp(&scenes[sa].0[ia].score)
            .unwrap_or(Ordering::Equal)
            .then((sa, ia).cmp(&(sb, ib)))
    });
    let mut taken: Vec<Vec<bool>> = scenes.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let num_gt: usize = scenes.iter().map(|(_, g)| g.len()).sum();
    let mut curve = PrCurve {
        num_gt,
        ..PrCurve::default()
    };
    for (s, i) in order {
        let gts = scenes[s].1;
        match nearest_free(&scenes[s].0[i], gts, &taken[s], dist) {
            Some(g) => {
                taken[s][g] = true;
                curve.tp += 1;
            }
            None => curve.fp += 1,
        }
        let seen = (curve.tp + curve.fp) as f64;
        curve.precision.push(curve.tp as f64 / seen);
        curve.recall.push(if num_gt == 0 { 0.0 } else { curve.tp as f64 / num_gt as f64 });
    }
    curve
}

/// Area under the precision envelope restricted to the recall/precision floors.
pub fn ap_from_curve(curve: &PrCurve, min_recall: f64, min_precision: f64) -> f64 {
    if curve.num_gt == 0 || curve.recall.is_empty() {
        return 0.0;
    }
    let n = curve.precision.len();
    let mut envelope = curve.precision.clone();
    for k in (0..n.saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0f64;
    for (&recall, &env) in curve.recall.iter().zip(&envelope) {
        let lo = prev_recall.max(min_recall);
        let hi = recall.min(1.0);
        if hi > lo && env >= min_precision {
            area += (hi - lo) * env;
        }
        prev_recall = recall;
    }
    (area / (1.0 - min_recall)).clamp(0.0, 1.0)
}

/// Mean AP over the distance thresholds for one class in one scene.
pub fn average_precision(preds: &[Box3D], gts: &[Box3D], cfg: &EvalConfig) -> f64 {
    class_ap(&[(preds, gts)], cfg).0
}

fn class_ap(scenes: &[ScenePair<'_>], cfg: &EvalConfig) -> (f64, Vec<f64>) {
    let per: Vec<f64> = cfg
        .dist_thresholds
        .iter()
        .map(|&d| ap_from_curve(&pr_curve(scenes, d), cfg.min_recall, cfg.min_precision))
        .collect();
    let mean = if per.is_empty() {
        0.0
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    };
    (mean, per)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_id: u32,
    pub name: Option<String>,
    pub ap: f64,
    pub ap_per_threshold: Vec<f64>,
    /// Recall at the largest distance threshold.
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub num_gt: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "AP_B")]
    pub ap_b: Option<f64>,
    #[serde(rename = "AP_N")]
    pub ap_n: Option<f64>,
    #[serde(rename = "AR_N")]
    pub ar_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassResult>,
    pub aggregate: Aggregate,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Means over all classes, base classes and novel classes.
pub fn aggregate(results: &[ClassResult], vocab: &Vocabulary) -> Result<Aggregate> {
    if results.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    let all: Vec<f64> = results.iter().map(|r| r.ap).collect();
    let base: Vec<f64> = results
        .iter()
        .filter(|r| vocab.base_ids().contains(&r.class_id))
        .map(|r| r.ap)
        .collect();
    let novel: Vec<&ClassResult> = results.iter().filter(|r| vocab.is_novel(r.class_id)).collect();
    let novel_ap: Vec<f64> = novel.iter().map(|r| r.ap).collect();
    let novel_recall: Vec<f64> = novel.iter().map(|r| r.recall).collect();
    Ok(Aggregate {
        map: mean(&all).expect("non-empty"),
        ap_b: mean(&base),
        ap_n: mean(&novel_ap),
        ar_n: mean(&novel_recall),
    })
}

/// Per-class and aggregate metrics over a dataset of `(predictions, ground truth)` scenes.
///
/// Only classes of the vocabulary with at least one ground-truth box are scored.
pub fn evaluate(scenes: &[LabelledScene], vocab: &Vocabulary, cfg: &EvalConfig) -> Result<EvalReport> {
    let mut by_class: BTreeMap<u32, Vec<LabelledScene>> = BTreeMap::new();
    for class_id in vocab.all_ids() {
        let split: Vec<LabelledScene> = scenes
            .iter()
            .map(|(p, g)| {
                (
                    p.iter().filter(|b| b.class_id == class_id).copied().collect(),
                    g.iter().filter(|b| b.class_id == class_id).copied().collect(),
                )
            })
            .collect();
        if split.iter().any(|(_, g)| !g.is_empty()) {
            by_class.insert(class_id, split);
        }
    }
    let largest = cfg.largest_threshold();
    let per_class: Vec<ClassResult> = by_class
        .iter()
        .map(|(&class_id, split)| {
            let pairs: Vec<ScenePair<'_>> = split.iter().map(|(p, g)| (p.as_slice(), g.as_slice())).collect();
            let (ap, ap_per_threshold) = class_ap(&pairs, cfg);
            let curve = pr_curve(&pairs, largest);
            ClassResult {
                class_id,
                name: vocab.name(class_id).map(str::to_owned),
                ap,
                ap_per_threshold,
                recall: curve.tp as f64 / curve.num_gt as f64,
                tp: curve.tp,
                fp: curve.fp,
                fn_: curve.num_gt - curve.tp,
                num_gt: curve.num_gt,
            }
        })
        .collect();
    let aggregate = aggregate(&per_class, vocab)?;
    Ok(EvalReport { per_class, aggregate })
}
