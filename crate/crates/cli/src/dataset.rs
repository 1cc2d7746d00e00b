use std::fs;
use std::path::{Path, PathBuf};

use frustum_forge::io::{
    load_anchors, load_detections, load_scene, load_vocabulary, save_anchors, save_detections, save_scene,
    write_json, AnchorTable, BoxRecord, Detection2D, DetectionRecord, Scene, Vocabulary,
};
use frustum_forge::seeker::CandidateSet;
use frustum_forge::synth::{default_anchors, default_vocabulary, SyntheticScene};
use frustum_forge::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCENE_FILE: &str = "scene.json";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const ANCHORS_FILE: &str = "anchors.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSetRecord {
    pub camera_id: String,
    pub detection: DetectionRecord,
    pub member_count: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub candidates: Vec<BoxRecord>,
}

impl From<&CandidateSet> for CandidateSetRecord {
    fn from(set: &CandidateSet) -> Self {
        CandidateSetRecord {
            camera_id: set.camera_id.clone(),
            detection: DetectionRecord::from(&set.detection),
            member_count: set.member_count,
            d_min: set.d_min,
            d_max: set.d_max,
            candidates: set.candidates.iter().map(BoxRecord::from).collect(),
        }
    }
}

impl CandidateSetRecord {
    pub fn into_set(self) -> Result<CandidateSet> {
        Ok(CandidateSet {
            camera_id: self.camera_id,
            detection: self.detection.into_detection()?,
            member_count: self.member_count,
            d_min: self.d_min,
            d_max: self.d_max,
            candidates: self.candidates.into_iter().map(BoxRecord::into_box).collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlmLabel {
    pub class_id: u32,
    pub score: f64,
}

/// Scene directories of a dataset, sorted by name.
fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::Format(format!("{}: {e}", root.display())))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::Format(e.to_string()))?.path();
        if path.join(SCENE_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!("no scenes under {}", root.display())));
    }
    Ok(dirs)
}

/// Loads every `<dir>/<scene>/scene.json` with detections from the mirror
/// directory `det_root` (the dataset itself when `None`).
pub fn load_dataset(root: &Path, det_root: Option<&Path>) -> Result<Vec<(Scene, Vec<Detection2D>)>> {
    scene_dirs(root)?
        .into_iter()
        .map(|dir| {
            let scene = load_scene(&dir.join(SCENE_FILE))?;
            let det_dir = match det_root {
                Some(d) => d.join(dir.file_name().unwrap_or_default()),
                None => dir.clone(),
            };
            let dets = load_detections(&det_dir.join(DETECTIONS_FILE), &scene)?;
            Ok((scene, dets))
        })
        .collect()
}

pub fn save_dataset(root: &Path, scenes: &[SyntheticScene], vocab: &Vocabulary, anchors: &AnchorTable) -> Result<()> {
    for s in scenes {
        let dir = root.join(&s.scene.scene_id);
        save_scene(&dir.join(SCENE_FILE), &s.scene)?;
        save_detections(&dir.join(DETECTIONS_FILE), &s.detections)?;
    }
    write_json(&root.join(VOCAB_FILE), vocab)?;
    save_anchors(&root.join(ANCHORS_FILE), anchors)
}

/// Explicit file first, then the dataset's own copy, then the built-in table.
pub fn vocabulary(flag: Option<&Path>, root: Option<&Path>) -> Result<Vocabulary> {
    let vocab = match resolve(flag, root, VOCAB_FILE) {
        Some(p) => load_vocabulary(&p)?,
        None => default_vocabulary(),
    };
    vocab.validate()?;
    Ok(vocab)
}

pub fn anchors(flag: Option<&Path>, root: Option<&Path>, vocab: Option<&Vocabulary>) -> Result<AnchorTable> {
    let table = match resolve(flag, root, ANCHORS_FILE) {
        Some(p) => load_anchors(&p)?,
        None => default_anchors(),
    };
    table.validate(vocab)?;
    Ok(table)
}

fn resolve(flag: Option<&Path>, root: Option<&Path>, name: &str) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| root.map(|r| r.join(name)).filter(|p| p.is_file()))
}
