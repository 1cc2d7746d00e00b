//! Serde shapes of the on-disk JSON formats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Box2D, Box3D, CameraModel, Cloud, Point3D};

use super::{Detection2D, Scene};

/// `{class_id, score, center: [x, y, z], size: [w, l, h], yaw}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub class_id: u32,
    pub score: f64,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

impl From<&Box3D> for BoxRecord {
    fn from(b: &Box3D) -> Self {
        BoxRecord {
            class_id: b.class_id,
            score: b.score,
            center: [b.center.x, b.center.y, b.center.z],
            size: [b.w, b.l, b.h],
            yaw: b.yaw,
        }
    }
}

impl BoxRecord {
    pub fn into_box(self) -> Result<Box3D> {
        let c = self.center;
        Box3D::new(Point3D::new(c[0], c[1], c[2]), self.size, self.yaw, self.class_id, self.score)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub camera_id: String,
    /// 3x3 row-major.
    pub intrinsics: Vec<f64>,
    /// 4x4 row-major, LiDAR to camera.
    pub extrinsic: Vec<f64>,
    pub image_w: f64,
    pub image_h: f64,
}

impl From<&CameraModel> for CameraRecord {
    fn from(c: &CameraModel) -> Self {
        CameraRecord {
            camera_id: c.camera_id.clone(),
            intrinsics: c.intrinsics.iter().flatten().copied().collect(),
            extrinsic: c.extrinsic.iter().flatten().copied().collect(),
            image_w: c.image_w,
            image_h: c.image_h,
        }
    }
}

impl CameraRecord {
    pub fn into_camera(self) -> Result<CameraModel> {
        if self.intrinsics.len() != 9 || self.extrinsic.len() != 16 {
            return Err(Error::Format(format!(
                "camera `{}` needs 9 intrinsic and 16 extrinsic values",
                self.camera_id
            )));
        }
        let mut intrinsics = [[0.0; 3]; 3];
        for (i, v) in self.intrinsics.iter().enumerate() {
            intrinsics[i / 3][i % 3] = *v;
        }
        let mut extrinsic = [[0.0; 4]; 4];
        for (i, v) in self.extrinsic.iter().enumerate() {
            extrinsic[i / 4][i % 4] = *v;
        }
        let cam = CameraModel {
            camera_id: self.camera_id,
            intrinsics,
            extrinsic,
            image_w: self.image_w,
            image_h: self.image_h,
        };
        cam.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(cam)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub scene_id: String,
    pub points_file: String,
    pub point_count: usize,
    pub cameras: Vec<CameraRecord>,
    #[serde(default)]
    pub base_gt: Vec<BoxRecord>,
    #[serde(default)]
    pub novel_gt: Vec<BoxRecord>,
}

impl SceneManifest {
    pub fn from_scene(scene: &Scene, points_file: String) -> Self {
        SceneManifest {
            scene_id: scene.scene_id.clone(),
            points_file,
            point_count: scene.cloud.len(),
            cameras: scene.cameras.iter().map(CameraRecord::from).collect(),
            base_gt: scene.base_gt.iter().map(BoxRecord::from).collect(),
            novel_gt: scene.novel_gt.iter().map(BoxRecord::from).collect(),
        }
    }

    pub fn into_scene(self, cloud: Cloud) -> Result<Scene> {
        Ok(Scene {
            scene_id: self.scene_id,
            cloud,
            cameras: self
                .cameras
                .into_iter()
                .map(CameraRecord::into_camera)
                .collect::<Result<_>>()?,
            base_gt: self
                .base_gt
                .into_iter()
                .map(BoxRecord::into_box)
                .collect::<Result<_>>()?,
            novel_gt: self
                .novel_gt
                .into_iter()
                .map(BoxRecord::into_box)
                .collect::<Result<_>>()?,
        })
    }
}

/// `{camera_id, class_id, score, box: [u_min, v_min, u_max, v_max]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub camera_id: String,
    pub class_id: u32,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl From<&Detection2D> for DetectionRecord {
    fn from(d: &Detection2D) -> Self {
        DetectionRecord {
            camera_id: d.camera_id.clone(),
            class_id: d.class_id,
            score: d.score,
            bbox: [d.bbox.u_min, d.bbox.v_min, d.bbox.u_max, d.bbox.v_max],
        }
    }
}

impl DetectionRecord {
    pub fn into_detection(self) -> Result<Detection2D> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Format(format!(
                "detection score {} outside [0, 1]",
                self.score
            )));
        }
        let [u0, v0, u1, v1] = self.bbox;
        Ok(Detection2D {
            camera_id: self.camera_id,
            class_id: self.class_id,
            score: self.score,
            bbox: Box2D::new(u0, v0, u1, v1)?,
        })
    }
}
