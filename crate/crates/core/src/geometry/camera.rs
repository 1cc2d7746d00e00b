use crate::error::{Error, Result};
use crate::Scalar;

use super::{Box2, Box3, Point3};

/// Pinhole camera with a rigid LiDAR-to-camera extrinsic.
///
/// Camera frame convention: +z forward (depth), +x right, +y down.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T> {
    pub camera_id: String,
    /// Row-major 3x3, upper triangular.
    pub intrinsics: [[T; 3]; 3],
    /// Row-major 4x4 mapping LiDAR coordinates to camera coordinates.
    pub extrinsic: [[T; 4]; 4],
    pub image_w: T,
    pub image_h: T,
}

/// A projected point: pixel coordinates plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    pub u: T,
    pub v: T,
    pub depth: T,
}

fn min_depth<T: Scalar>() -> T {
    T::lit(1e-6)
}

impl<T: Scalar> Camera<T> {
    /// Level camera mounted at `mount`, looking along heading `yaw` in the ground plane.
    #[allow(clippy::too_many_arguments)]
    pub fn looking_along(
        camera_id: impl Into<String>,
        yaw: T,
        mount: Point3<T>,
        fx: T,
        fy: T,
        cu: T,
        cv: T,
        image_w: T,
        image_h: T,
    ) -> Self {
        let (s, c) = yaw.sin_cos();
        let z = T::zero();
        let one = T::one();
        // rows are the camera axes expressed in the LiDAR frame
        let rot = [[s, -c, z], [z, z, -one], [c, s, z]];
        let t: Vec<T> = rot
            .iter()
            .map(|r| -(r[0] * mount.x + r[1] * mount.y + r[2] * mount.z))
            .collect();
        let extrinsic = [
            [rot[0][0], rot[0][1], rot[0][2], t[0]],
            [rot[1][0], rot[1][1], rot[1][2], t[1]],
            [rot[2][0], rot[2][1], rot[2][2], t[2]],
            [z, z, z, one],
        ];
        Camera {
            camera_id: camera_id.into(),
            intrinsics: [[fx, z, cu], [z, fy, cv], [z, z, one]],
            extrinsic,
            image_w,
            image_h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidCamera {
                camera_id: self.camera_id.clone(),
                reason,
            })
        };
        let k = &self.intrinsics;
        let all_finite = k.iter().flatten().all(|v| v.is_finite())
            && self.extrinsic.iter().flatten().all(|v| v.is_finite());
        if !all_finite {
            return fail("non-finite calibration".into());
        }
        if k[1][0] != T::zero() || k[2][0] != T::zero() || k[2][1] != T::zero() {
            return fail("intrinsics not upper triangular".into());
        }
        if !(k[0][0] > T::zero() && k[1][1] > T::zero() && k[2][2] > T::zero()) {
            return fail("focal terms must be positive".into());
        }
        if !(self.image_w > T::zero() && self.image_h > T::zero()) {
            return fail("image size must be positive".into());
        }
        let r = self.rotation();
        let tol = T::tolerance();
        for i in 0..3 {
            for j in 0..3 {
                let dot = r[i][0] * r[j][0] + r[i][1] * r[j][1] + r[i][2] * r[j][2];
                let expected = if i == j { T::one() } else { T::zero() };
                if (dot - expected).abs() > tol {
                    return fail("extrinsic rotation is not orthonormal".into());
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - T::one()).abs() > tol {
            return fail(format!("extrinsic rotation has determinant {det}"));
        }
        let last = self.extrinsic[3];
        if last[0] != T::zero() || last[1] != T::zero() || last[2] != T::zero() || last[3] != T::one() {
            return fail("extrinsic bottom row must be [0, 0, 0, 1]".into());
        }
        Ok(())
    }

    pub fn rotation(&self) -> [[T; 3]; 3] {
        let e = &self.extrinsic;
        [
            [e[0][0], e[0][1], e[0][2]],
            [e[1][0], e[1][1], e[1][2]],
            [e[2][0], e[2][1], e[2][2]],
        ]
    }

    pub fn to_camera(&self, p: Point3<T>) -> Point3<T> {
        let e = &self.extrinsic;
        Point3::new(
            e[0][0] * p.x + e[0][1] * p.y + e[0][2] * p.z + e[0][3],
            e[1][0] * p.x + e[1][1] * p.y + e[1][2] * p.z + e[1][3],
            e[2][0] * p.x + e[2][1] * p.y + e[2][2] * p.z + e[2][3],
        )
    }

    /// Inverse of [`Camera::to_camera`]: `R^T (p - t)`.
    pub fn to_lidar(&self, p: Point3<T>) -> Point3<T> {
        let e = &self.extrinsic;
        let d = Point3::new(p.x - e[0][3], p.y - e[1][3], p.z - e[2][3]);
        Point3::new(
            e[0][0] * d.x + e[1][0] * d.y + e[2][0] * d.z,
            e[0][1] * d.x + e[1][1] * d.y + e[2][1] * d.z,
            e[0][2] * d.x + e[1][2] * d.y + e[2][2] * d.z,
        )
    }

    /// Camera position in the LiDAR frame.
    pub fn center(&self) -> Point3<T> {
        self.to_lidar(Point3::origin())
    }

    /// Pinhole projection of a camera-frame point; the caller checks depth.
    pub fn pixel(&self, q: Point3<T>) -> (T, T) {
        let k = &self.intrinsics;
        let x = q.x / q.z;
        let y = q.y / q.z;
        (k[0][0] * x + k[0][1] * y + k[0][2], k[1][1] * y + k[1][2])
    }

    /// Camera-frame point at depth `depth` on the ray through pixel `(u, v)`.
    pub fn unproject(&self, u: T, v: T, depth: T) -> Point3<T> {
        let k = &self.intrinsics;
        let y = (v - k[1][2]) / k[1][1];
        let x = (u - k[0][2] - k[0][1] * y) / k[0][0];
        Point3::new(x * depth, y * depth, depth)
    }

    pub fn image_rect(&self) -> Box2<T> {
        Box2 {
            u_min: T::zero(),
            v_min: T::zero(),
            u_max: self.image_w,
            v_max: self.image_h,
        }
    }
}

/// Projects a LiDAR-frame point to pixel coordinates.
pub fn project_point<T: Scalar>(p: Point3<T>, cam: &Camera<T>) -> Result<Projection<T>> {
    let q = cam.to_camera(p);
    if q.z <= min_depth() {
        return Err(Error::NonPositiveDepth {
            depth: q.z.to_f64_lossy(),
        });
    }
    let (u, v) = cam.pixel(q);
    Ok(Projection { u, v, depth: q.z })
}

/// Bounding rectangle of the in-front corners, before clamping to the image.
pub fn project_box_unclamped<T: Scalar>(b: &Box3<T>, cam: &Camera<T>) -> Result<Box2<T>> {
    let mut rect: Option<Box2<T>> = None;
    for corner in b.corners() {
        let Ok(p) = project_point(corner, cam) else {
            continue;
        };
        rect = Some(match rect {
            None => Box2 {
                u_min: p.u,
                v_min: p.v,
                u_max: p.u,
                v_max: p.v,
            },
            Some(r) => Box2 {
                u_min: r.u_min.min(p.u),
                v_min: r.v_min.min(p.v),
                u_max: r.u_max.max(p.u),
                v_max: r.v_max.max(p.v),
            },
        });
    }
    rect.ok_or_else(|| Error::BoxBehindCamera {
        camera_id: cam.camera_id.clone(),
    })
}

/// Image-space footprint of a box, clamped to the image.
pub fn project_box<T: Scalar>(b: &Box3<T>, cam: &Camera<T>) -> Result<Box2<T>> {
    let r = project_box_unclamped(b, cam)?;
    let clamp = |v: T, hi: T| v.max(T::zero()).min(hi);
    Ok(Box2 {
        u_min: clamp(r.u_min, cam.image_w),
        v_min: clamp(r.v_min, cam.image_h),
        u_max: clamp(r.u_max, cam.image_w),
        v_max: clamp(r.v_max, cam.image_h),
    })
}
