use std::collections::BTreeSet;
use std::path::Path;

use frustum_forge::baselines::{cluster_proposals, logit_fuse};
use frustum_forge::eval::{evaluate, match_boxes, pr_curve, LabelledScene, ScenePair};
use frustum_forge::io::{
    load_config, load_detections, load_proposals, load_scene, read_json, save_proposals, save_scene, write_atomic,
    write_json, AnchorTable, Detection2D, PipelineConfig, Scene, Vocabulary,
};
use frustum_forge::oracle::{rank_scene, Criteria, OracleConfig};
use frustum_forge::propagator::{geometry_simulate, load_bank, save_bank};
use frustum_forge::seeker::{seek_scene, CandidateSet};
use frustum_forge::selftrain::{DetectorPort, NoisyOracleDetector, SelfTrainer, LABEL_MATCH_DIST};
use frustum_forge::synth::{default_anchors, default_vocabulary, generate_dataset, SynthConfig};
use frustum_forge::{Box3D, Error, Result};
use serde::Serialize;

use crate::dataset::{self, CandidateSetRecord, VlmLabel};
use crate::report::{RunReport, Stopwatch};
use crate::{
    ClusterArgs, EvalArgs, Failure, FuseArgs, PipelineArgs, PropagateArgs, RankArgs, SeekArgs, SelftrainArgs,
    SynthArgs,
};

const ALPHA_SWEEP: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];

fn config(path: Option<&Path>, overrides: impl FnOnce(&mut PipelineConfig)) -> Result<PipelineConfig, Failure> {
    let mut cfg = match path {
        Some(p) => load_config(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    overrides(&mut cfg);
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn synth_config(path: Option<&Path>) -> Result<SynthConfig, Failure> {
    let cfg: SynthConfig = match path {
        Some(p) => read_json(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => SynthConfig::default(),
    };
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn all_gt(scene: &Scene) -> Vec<Box3D> {
    scene.base_gt.iter().chain(&scene.novel_gt).copied().collect()
}

pub fn synth(a: SynthArgs, timings: bool) -> Result<(), Failure> {
    let cfg = synth_config(a.spec.as_deref())?;
    let mut clock = Stopwatch::new(timings);
    let scenes = clock.time("synth", || generate_dataset(&cfg, a.n, a.seed))?;
    let vocab = default_vocabulary();
    clock.time("write", || dataset::save_dataset(&a.out, &scenes, &vocab, &default_anchors()))?;
    let mut report = RunReport::new("synth", &cfg, Some(a.seed));
    report.count("scenes", scenes.len());
    for s in &scenes {
        report.count("base_objects", s.scene.base_gt.len());
        report.count("novel_objects", s.scene.novel_gt.len());
        report.count("detections", s.detections.len());
        report.count("points", s.scene.cloud.points.len());
    }
    report.finish(clock, a.report.as_deref())?;
    Ok(())
}

pub fn seek(a: SeekArgs, timings: bool) -> Result<(), Failure> {
    let cfg = config(a.common.config.as_deref(), |_| {})?;
    let mut clock = Stopwatch::new(timings);
    let scene = clock.time("load", || load_scene(&a.scene))?;
    let dets = load_detections(&a.detections, &scene)?;
    let anchors = dataset::anchors(a.anchors.as_deref(), None, None)?;
    let (sets, stats) = clock.time("seek", || seek_scene(&scene, &dets, &anchors, &cfg.search_spec()))?;
    let records: Vec<CandidateSetRecord> = sets.iter().map(CandidateSetRecord::from).collect();
    write_json(&a.out, &records)?;
    let mut report = RunReport::for_pipeline("seek", &cfg);
    report.count("detections", stats.detections);
    report.count("frustums_built", stats.frustums_built);
    report.count("frustums_rejected", stats.frustums_empty);
    report.count("candidates", stats.candidates);
    report.finish(clock, a.common.report.as_deref())?;
    Ok(())
}

pub fn rank(a: RankArgs, timings: bool) -> Result<(), Failure> {
    let cfg = config(a.common.config.as_deref(), |c| {
        if let Some(v) = a.alpha_iou {
            c.alpha_iou = v;
        }
    })?;
    let mut clock = Stopwatch::new(timings);
    let scene = clock.time("load", || load_scene(&a.scene))?;
    let records: Vec<CandidateSetRecord> = read_json(&a.candidates)?;
    let sets = records
        .into_iter()
        .map(CandidateSetRecord::into_set)
        .collect::<Result<Vec<_>>>()?;
    let (picked, stats) = clock.time("rank", || rank_scene(&scene, &sets, &cfg.oracle()))?;
    let proposals: Vec<Box3D> = picked.iter().map(|c| c.bbox).collect();
    save_proposals(&a.out, &proposals)?;
    let mut report = RunReport::for_pipeline("rank", &cfg);
    report.count("candidate_sets", stats.candidate_sets);
    report.count("proposals", stats.selected);
    report.count("rejected", stats.rejected);
    report.finish(clock, a.common.report.as_deref())?;
    Ok(())
}

pub fn propagate(a: PropagateArgs, timings: bool) -> Result<(), Failure> {
    let cfg = config(a.common.config.as_deref(), |c| {
        if let Some(s) = a.seed {
            c.seed = s;
        }
    })?;
    let mut clock = Stopwatch::new(timings);
    let scene = clock.time("load", || load_scene(&a.scene))?;
    let bank = load_bank(&a.bank)?;
    let (augmented, _, stats) = clock.time("propagate", || geometry_simulate(&bank, &scene, &cfg.simulator(), cfg.seed))?;
    save_scene(&a.out, &augmented)?;
    let mut report = RunReport::for_pipeline("propagate", &cfg);
    report.count("bank_entries", bank.len());
    report.count("pastes_requested", stats.requested);
    report.count("pastes", stats.pasted);
    report.count("pastes_exhausted", stats.exhausted);
    report.count("points_added", stats.points_added);
    report.count("points_removed", stats.points_removed);
    report.finish(clock, a.common.report.as_deref())?;
    Ok(())
}

type Proposed = (Vec<Vec<CandidateSet>>, Vec<Vec<Box3D>>);

/// Seeker and oracle over every scene; returns the proposals per scene.
fn propose(
    data: &[(Scene, Vec<Detection2D>)],
    anchors: &AnchorTable,
    cfg: &PipelineConfig,
    report: &mut RunReport,
    clock: &mut Stopwatch,
) -> Result<Proposed> {
    let spec = cfg.search_spec();
    let oracle = cfg.oracle();
    let mut all_sets = Vec::with_capacity(data.len());
    let mut all_props = Vec::with_capacity(data.len());
    for (scene, dets) in data {
        let (sets, s) = clock.time("seek", || seek_scene(scene, dets, anchors, &spec))?;
        report.count("detections", s.detections);
        report.count("frustums_built", s.frustums_built);
        report.count("frustums_rejected", s.frustums_empty);
        report.count("candidates", s.candidates);
        let (picked, r) = clock.time("rank", || rank_scene(scene, &sets, &oracle))?;
        report.count("proposals", r.selected);
        report.count("proposals_rejected", r.rejected);
        all_props.push(picked.iter().map(|c| c.bbox).collect());
        all_sets.push(sets);
    }
    Ok((all_sets, all_props))
}

pub fn selftrain(a: SelftrainArgs, timings: bool) -> Result<(), Failure> {
    let cfg = config(a.common.config.as_deref(), |c| {
        if let Some(r) = a.rounds {
            c.n_rounds = r;
        }
        if let Some(s) = a.seed {
            c.seed = s;
        }
    })?;
    let mut clock = Stopwatch::new(timings);
    let mut report = RunReport::for_pipeline("selftrain", &cfg);
    let vocab = dataset::vocabulary(a.vocab.as_deref(), Some(&a.dataset))?;
    let anchors = dataset::anchors(a.anchors.as_deref(), Some(&a.dataset), Some(&vocab))?;
    let data = clock.time("load", || dataset::load_dataset(&a.dataset, a.detections.as_deref()))?;
    let (_, props) = propose(&data, &anchors, &cfg, &mut report, &mut clock)?;
    let scenes: Vec<Scene> = data.into_iter().map(|(s, _)| s).collect();
    report.count("scenes", scenes.len());
    let mut trainer = clock.time("propagate", || {
        SelfTrainer::new(scenes, props, vocab.novel_ids(), cfg.rounds(), cfg.simulator(), cfg.filter())
    })?;
    report.count("bank_initial", trainer.bank().len());
    let mut detector = NoisyOracleDetector::new(cfg.seed);
    let rounds = clock.time("selftrain", || trainer.run(&mut detector))?;
    for r in &rounds {
        report.count("pastes", r.pasted);
        report.count("evictions", r.bank_update.evicted);
    }
    report.metric("rounds", &rounds);
    if let Some(p) = &a.bank_out {
        save_bank(p, trainer.bank())?;
    }
    report.finish(clock, a.common.report.as_deref())?;
    Ok(())
}

pub fn fuse(a: FuseArgs, timings: bool) -> Result<(), Failure> {
    let cfg = config(a.common.config.as_deref(), |c| {
        if let Some(g) = a.gamma {
            c.gamma_fuse = g;
        }
    })?;
    let clock = Stopwatch::new(timings);
    let preds = load_proposals(&a.pred3d)?;
    let vlm: Vec<VlmLabel> = read_json(&a.vlm)?;
    if vlm.len() != preds.len() {
        return Err(Error::Format(format!("{} 3D predictions but {} image labels", preds.len(), vlm.len())).into());
    }
    if let Some(v) = vlm.iter().find(|v| !(0.0..=1.0).contains(&v.score)) {
        return Err(Error::Format(format!("image score {} outside [0, 1]", v.score)).into());
    }
    let mut relabelled = 0;
    let fused: Vec<Box3D> = preds
        .iter()
        .zip(&vlm)
        .map(|(b, v)| {
            let mut out = *b;
            out.class_id = logit_fuse(v.score, b.class_id, v.class_id, cfg.gamma_fuse);
            relabelled += usize::from(out.class_id != b.class_id);
            out
        })
        .collect();
    save_proposals(&a.out, &fused)?;
    let mut report = RunReport::for_pipeline("fuse", &cfg);
    report.count("predictions", fused.len());
    report.count("relabelled", relabelled);
    report.finish(clock, a.common.report.as_deref())?;
    Ok(())
}

pub fn cluster(a: ClusterArgs, timings: bool) -> Result<(), Failure> {
    let cfg = config(a.common.config.as_deref(), |c| {
        if let Some(e) = a.eps {
            c.dbscan_eps = e;
        }
        if let Some(m) = a.min_pts {
            c.dbscan_min_pts = m;
        }
        if let Some(w) = a.label_weight {
            c.label_weight = w;
        }
    })?;
    let mut clock = Stopwatch::new(timings);
    let scene = clock.time("load", || load_scene(&a.scene))?;
    let labels: Vec<i64> = read_json(&a.labels)?;
    if labels.len() != scene.cloud.points.len() {
        return Err(Error::Format(format!(
            "{} labels for {} points",
            labels.len(),
            scene.cloud.points.len()
        ))
        .into());
    }
    let boxes = clock.time("cluster", || cluster_proposals(&scene.cloud.points, &labels, &cfg.cluster()))?;
    save_proposals(&a.out, &boxes)?;
    let mut report = RunReport::for_pipeline("cluster", &cfg);
    report.count("points", labels.len());
    report.count("proposals", boxes.len());
    report.finish(clock, a.common.report.as_deref())?;
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let cfg = config(a.config.as_deref(), |_| {})?;
    let preds = load_proposals(&a.pred)?;
    let scene = load_scene(&a.gt)?;
    let vocab = dataset::vocabulary(a.vocab.as_deref(), None)?;
    let result = evaluate(&[(preds, all_gt(&scene))], &vocab, &cfg.eval())?;
    write_json(&a.out, &result)?;
    Ok(())
}

fn novel_recall(props: &[Vec<Box3D>], scenes: &[Scene], novel: &BTreeSet<u32>) -> (usize, usize) {
    let (mut hit, mut total) = (0, 0);
    for (p, s) in props.iter().zip(scenes) {
        for c in novel {
            let preds: Vec<Box3D> = p.iter().filter(|b| b.class_id == *c).copied().collect();
            let gts: Vec<Box3D> = s.novel_gt.iter().filter(|b| b.class_id == *c).copied().collect();
            hit += match_boxes(&preds, &gts, LABEL_MATCH_DIST).pairs.len();
            total += gts.len();
        }
    }
    (hit, total)
}

#[derive(Serialize)]
struct SweepRow {
    criteria: Criteria,
    alpha_iou: f64,
    proposals: usize,
    novel_matched: usize,
    novel_total: usize,
    novel_recall: f64,
}

#[derive(Serialize)]
struct PrRow {
    class_id: u32,
    dist: f64,
    rank: usize,
    recall: f64,
    precision: f64,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn oracle_sweep(
    sets: &[Vec<CandidateSet>],
    scenes: &[Scene],
    base: &PipelineConfig,
    novel: &BTreeSet<u32>,
) -> Result<Vec<u8>> {
    let mut variants: Vec<(Criteria, f64)> = ALPHA_SWEEP.iter().map(|a| (Criteria::Combined, *a)).collect();
    variants.push((Criteria::DensityOnly, base.alpha_iou));
    variants.push((Criteria::AlignmentOnly, base.alpha_iou));
    let mut rows = Vec::with_capacity(variants.len());
    for (criteria, alpha_iou) in variants {
        let oracle = OracleConfig {
            criteria,
            alpha_iou,
            ..base.oracle()
        };
        let mut props = Vec::with_capacity(scenes.len());
        for (scene, s) in scenes.iter().zip(sets) {
            let (picked, _) = rank_scene(scene, s, &oracle)?;
            props.push(picked.iter().map(|c| c.bbox).collect::<Vec<_>>());
        }
        let (hit, total) = novel_recall(&props, scenes, novel);
        rows.push(SweepRow {
            criteria,
            alpha_iou,
            proposals: props.iter().map(Vec::len).sum(),
            novel_matched: hit,
            novel_total: total,
            novel_recall: if total > 0 { hit as f64 / total as f64 } else { 0.0 },
        });
    }
    to_csv(&rows)
}

fn pr_series(preds: &[Vec<Box3D>], scenes: &[Scene], vocab: &Vocabulary, dists: &[f64]) -> Result<Vec<u8>> {
    let gts: Vec<Vec<Box3D>> = scenes.iter().map(all_gt).collect();
    let mut rows = Vec::new();
    for class_id in vocab.all_ids() {
        let split: Vec<LabelledScene> = preds
            .iter()
            .zip(&gts)
            .map(|(p, g)| {
                (
                    p.iter().filter(|b| b.class_id == class_id).copied().collect(),
                    g.iter().filter(|b| b.class_id == class_id).copied().collect(),
                )
            })
            .collect();
        if split.iter().all(|(_, g)| g.is_empty()) {
            continue;
        }
        let pairs: Vec<ScenePair<'_>> = split.iter().map(|(p, g)| (p.as_slice(), g.as_slice())).collect();
        for &dist in dists {
            let curve = pr_curve(&pairs, dist);
            for (i, (&recall, &precision)) in curve.recall.iter().zip(&curve.precision).enumerate() {
                rows.push(PrRow {
                    class_id,
                    dist,
                    rank: i + 1,
                    recall,
                    precision,
                });
            }
        }
    }
    to_csv(&rows)
}

pub fn pipeline(a: PipelineArgs, timings: bool) -> Result<(), Failure> {
    let cfg = config(a.common.config.as_deref(), |c| {
        if let Some(s) = a.seed {
            c.seed = s;
        }
        if let Some(r) = a.rounds {
            c.n_rounds = r;
        }
        if let Some(v) = a.alpha_iou {
            c.alpha_iou = v;
        }
    })?;
    let mut clock = Stopwatch::new(timings);
    let mut report = RunReport::for_pipeline("pipeline", &cfg);

    let (data, vocab, anchors) = match &a.dataset {
        Some(dir) => {
            let vocab = dataset::vocabulary(None, Some(dir))?;
            let anchors = dataset::anchors(None, Some(dir), Some(&vocab))?;
            let data = clock.time("load", || dataset::load_dataset(dir, None))?;
            (data, vocab, anchors)
        }
        None => {
            let scfg = synth_config(a.spec.as_deref())?;
            report.metric("synth", &scfg);
            let generated = clock.time("synth", || generate_dataset(&scfg, a.n, cfg.seed))?;
            let data = generated.into_iter().map(|s| (s.scene, s.detections)).collect();
            (data, default_vocabulary(), default_anchors())
        }
    };
    report.count("scenes", data.len());
    let novel = vocab.novel_ids();

    let (sets, props) = propose(&data, &anchors, &cfg, &mut report, &mut clock)?;
    let scenes: Vec<Scene> = data.into_iter().map(|(s, _)| s).collect();
    for s in &scenes {
        report.count("base_objects", s.base_gt.len());
        report.count("novel_objects", s.novel_gt.len());
    }

    let mut trainer = clock.time("propagate", || {
        SelfTrainer::new(
            scenes.clone(),
            props.clone(),
            novel.clone(),
            cfg.rounds(),
            cfg.simulator(),
            cfg.filter(),
        )
    })?;
    report.count("bank_initial", trainer.bank().len());
    let mut detector = NoisyOracleDetector::new(cfg.seed);
    let rounds = clock.time("selftrain", || trainer.run(&mut detector))?;
    for r in &rounds {
        report.count("pastes", r.pasted);
        report.count("evictions", r.bank_update.evicted);
    }
    report.count("bank_final", trainer.bank().len());

    let labels = trainer.labels();
    detector.include_base = true;
    let final_preds: Vec<Vec<Box3D>> = clock.time("eval", || {
        scenes
            .iter()
            .zip(&labels)
            .map(|(s, l)| {
                let mut out: Vec<Box3D> = detector
                    .predict(s)?
                    .into_iter()
                    .filter(|b| !novel.contains(&b.class_id))
                    .collect();
                out.extend(l.iter().copied());
                Ok(out)
            })
            .collect::<Result<_>>()
    })?;
    report.count("final_predictions", final_preds.iter().map(Vec::len).sum());
    let eval_cfg = cfg.eval();
    let novel_only: Vec<LabelledScene> =
        props.iter().zip(&scenes).map(|(p, s)| (p.clone(), s.novel_gt.clone())).collect();
    let with_gt = |preds: &[Vec<Box3D>]| -> Vec<LabelledScene> {
        preds.iter().zip(&scenes).map(|(p, s)| (p.clone(), all_gt(s))).collect()
    };
    let seeker_eval = clock.time("eval", || evaluate(&novel_only, &vocab, &eval_cfg))?;
    let final_eval = clock.time("eval", || evaluate(&with_gt(&final_preds), &vocab, &eval_cfg))?;
    report.metric("seeker", seeker_eval.aggregate);
    report.metric("final", &final_eval);
    report.metric("rounds", &rounds);

    let plots = match &a.plot_data {
        Some(_) => Some((
            pr_series(&final_preds, &scenes, &vocab, &eval_cfg.dist_thresholds)?,
            clock.time("sweep", || oracle_sweep(&sets, &scenes, &cfg, &novel))?,
        )),
        None => None,
    };

    for (scene, labels) in scenes.iter().zip(&final_preds) {
        save_proposals(&a.out.join("predictions").join(format!("{}.json", scene.scene_id)), labels)?;
    }
    save_bank(&a.out.join("bank.json"), trainer.bank())?;
    if let (Some(dir), Some((pr, sweep))) = (&a.plot_data, plots) {
        write_atomic(&dir.join("pr_curves.csv"), &pr)?;
        write_atomic(&dir.join("oracle_sweep.csv"), &sweep)?;
    }
    let report_path = a.common.report.clone().unwrap_or_else(|| a.out.join("report.json"));
    report.finish(clock, Some(&report_path))?;
    Ok(())
}
