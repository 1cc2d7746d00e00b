//! Scene, detection, vocabulary and proposal files.
//!
//! A scene is a JSON manifest plus a dense little-endian `f32` point payload
//! (`x, y, z, intensity` per point, no header). Every other file is plain
//! JSON. All writers go through a temporary file and an atomic rename.

mod config;
mod records;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Box2D, Box3D, CameraModel, Cloud, Point3D};

pub use config::PipelineConfig;
pub use records::{BoxRecord, CameraRecord, DetectionRecord, SceneManifest};

/// One LiDAR sweep with its camera rig and annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub cloud: Cloud,
    pub cameras: Vec<CameraModel>,
    pub base_gt: Vec<Box3D>,
    /// Evaluation-only annotations for the novel classes.
    pub novel_gt: Vec<Box3D>,
}

impl Scene {
    pub fn camera(&self, camera_id: &str) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for cam in &self.cameras {
            cam.validate()?;
            if !seen.insert(cam.camera_id.as_str()) {
                return Err(Error::Format(format!("duplicate camera id `{}`", cam.camera_id)));
            }
        }
        if let Some(p) = self.cloud.points.iter().find(|p| !p.is_finite()) {
            return Err(Error::Format(format!("non-finite point {p:?}")));
        }
        for b in self.base_gt.iter().chain(&self.novel_gt) {
            b.validate()?;
        }
        Ok(())
    }

    pub fn validate_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        for b in self.base_gt.iter().chain(&self.novel_gt) {
            if !vocab.contains(b.class_id) {
                return Err(Error::Reference(format!(
                    "scene `{}` has box of unknown class {}",
                    self.scene_id, b.class_id
                )));
            }
        }
        Ok(())
    }
}

/// A 2D box proposed by an open-vocabulary image detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub camera_id: String,
    pub class_id: u32,
    pub score: f64,
    pub bbox: Box2D,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub id: u32,
    pub name: String,
}

/// Base and novel class lists; the two id sets are disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocabulary {
    pub base_classes: Vec<ClassEntry>,
    pub novel_classes: Vec<ClassEntry>,
}

impl Vocabulary {
    pub fn validate(&self) -> Result<()> {
        let base: BTreeSet<u32> = self.base_classes.iter().map(|c| c.id).collect();
        let mut novel = BTreeSet::new();
        for c in &self.novel_classes {
            if base.contains(&c.id) {
                return Err(Error::Format(format!("class {} is both base and novel", c.id)));
            }
            if !novel.insert(c.id) {
                return Err(Error::Format(format!("duplicate novel class {}", c.id)));
            }
        }
        if base.len() != self.base_classes.len() {
            return Err(Error::Format("duplicate base class id".into()));
        }
        Ok(())
    }

    pub fn base_ids(&self) -> BTreeSet<u32> {
        self.base_classes.iter().map(|c| c.id).collect()
    }

    pub fn novel_ids(&self) -> BTreeSet<u32> {
        self.novel_classes.iter().map(|c| c.id).collect()
    }

    pub fn all_ids(&self) -> BTreeSet<u32> {
        self.base_ids().union(&self.novel_ids()).copied().collect()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.base_classes.iter().chain(&self.novel_classes).any(|c| c.id == id)
    }

    pub fn is_novel(&self, id: u32) -> bool {
        self.novel_classes.iter().any(|c| c.id == id)
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.base_classes
            .iter()
            .chain(&self.novel_classes)
            .find(|c| c.id == id)
            .map(|c| c.name.as_str())
    }
}

/// Per-class prior box extents `(w, l, h)` in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorTable(pub BTreeMap<u32, [f64; 3]>);

impl AnchorTable {
    pub fn get(&self, class_id: u32) -> Option<[f64; 3]> {
        self.0.get(&class_id).copied()
    }

    pub fn validate(&self, vocab: Option<&Vocabulary>) -> Result<()> {
        for (id, size) in &self.0 {
            if !size.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(Error::Format(format!("anchor for class {id} has non-positive extent")));
            }
        }
        if let Some(vocab) = vocab {
            for c in &vocab.novel_classes {
                if !self.0.contains_key(&c.id) {
                    return Err(Error::MissingAnchor(c.id));
                }
            }
        }
        Ok(())
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Encodes points as little-endian `f32` quadruples.
pub fn encode_points(cloud: &Cloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points.iter().enumerate() {
        let intensity = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        for v in [p.x, p.y, p.z, intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_points(bytes: &[u8], expected: usize) -> Result<Cloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Format(format!(
            "point payload of {} bytes is not a multiple of 16",
            bytes.len()
        )));
    }
    let found = bytes.len() / 16;
    if found != expected {
        return Err(Error::Format(format!(
            "manifest declares {expected} points but payload holds {found}"
        )));
    }
    let mut points = Vec::with_capacity(found);
    let mut intensity = Vec::with_capacity(found);
    for chunk in bytes.chunks_exact(16) {
        let mut v = [0f32; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = f32::from_le_bytes(chunk[4 * k..4 * k + 4].try_into().unwrap());
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Format("non-finite value in point payload".into()));
        }
        points.push(Point3D::new(v[0] as f64, v[1] as f64, v[2] as f64));
        intensity.push(v[3] as f64);
    }
    Ok(Cloud::with_intensity(points, intensity))
}

fn points_file_for(manifest: &Path) -> String {
    let stem = manifest
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene");
    format!("{stem}.bin")
}

/// Writes `scene.json`-style manifest plus a sibling `.bin` payload.
pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    let points_file = points_file_for(path);
    let dir = path.parent().unwrap_or(Path::new(""));
    write_atomic(&dir.join(&points_file), &encode_points(&scene.cloud))?;
    let manifest = SceneManifest::from_scene(scene, points_file);
    write_json(path, &manifest)
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let manifest: SceneManifest = read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let points_path = dir.join(&manifest.points_file);
    let bytes = fs::read(&points_path).map_err(|e| Error::io(&points_path, e))?;
    let cloud = decode_points(&bytes, manifest.point_count)?;
    let scene = manifest.into_scene(cloud)?;
    scene.validate()?;
    Ok(scene)
}

/// Parses a detections file without resolving camera ids.
pub fn read_detections(path: &Path) -> Result<Vec<Detection2D>> {
    let records: Vec<DetectionRecord> = read_json(path)?;
    records.into_iter().map(DetectionRecord::into_detection).collect()
}

/// Parses a detections file and checks every camera id against the scene rig.
pub fn load_detections(path: &Path, scene: &Scene) -> Result<Vec<Detection2D>> {
    let dets = read_detections(path)?;
    check_detection_cameras(&dets, scene)?;
    Ok(dets)
}

pub fn check_detection_cameras(dets: &[Detection2D], scene: &Scene) -> Result<()> {
    for d in dets {
        if scene.camera(&d.camera_id).is_none() {
            return Err(Error::Reference(format!(
                "detection references unknown camera `{}` in scene `{}`",
                d.camera_id, scene.scene_id
            )));
        }
    }
    Ok(())
}

pub fn save_detections(path: &Path, dets: &[Detection2D]) -> Result<()> {
    let records: Vec<DetectionRecord> = dets.iter().map(DetectionRecord::from).collect();
    write_json(path, &records)
}

pub fn save_proposals(path: &Path, proposals: &[Box3D]) -> Result<()> {
    let records: Vec<BoxRecord> = proposals.iter().map(BoxRecord::from).collect();
    write_json(path, &records)
}

pub fn load_proposals(path: &Path) -> Result<Vec<Box3D>> {
    let records: Vec<BoxRecord> = read_json(path)?;
    records.into_iter().map(BoxRecord::into_box).collect()
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let vocab: Vocabulary = read_json(path)?;
    vocab.validate()?;
    Ok(vocab)
}

/// Anchors are stored as `{"<class_id>": [w, l, h], ...}`.
pub fn load_anchors(path: &Path) -> Result<AnchorTable> {
    let raw: BTreeMap<String, [f64; 3]> = read_json(path)?;
    let mut table = BTreeMap::new();
    for (k, v) in raw {
        let id: u32 = k
            .parse()
            .map_err(|_| Error::Format(format!("anchor key `{k}` is not a class id")))?;
        table.insert(id, v);
    }
    let anchors = AnchorTable(table);
    anchors.validate(None)?;
    Ok(anchors)
}

pub fn save_anchors(path: &Path, anchors: &AnchorTable) -> Result<()> {
    let raw: BTreeMap<String, [f64; 3]> = anchors.0.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    write_json(path, &raw)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineConfig::from_json(&text)
}
