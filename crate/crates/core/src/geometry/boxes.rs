use crate::error::{Error, Result};
use crate::scalar::normalize_angle;
use crate::Scalar;

use super::{Point3, PointCloud};

/// Axis-aligned image rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Box2<T> {
    pub u_min: T,
    pub v_min: T,
    pub u_max: T,
    pub v_max: T,
}

impl<T: Scalar> Box2<T> {
    pub fn new(u_min: T, v_min: T, u_max: T, v_max: T) -> Result<Self> {
        let b = Box2 {
            u_min,
            v_min,
            u_max,
            v_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.u_min, self.v_min, self.u_max, self.v_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.u_min > self.u_max || self.v_min > self.v_max {
            return Err(Error::Format(format!(
                "2D box [{}, {}, {}, {}] is not ordered",
                self.u_min, self.v_min, self.u_max, self.v_max
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> T {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> T {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> T {
        self.width().max(T::zero()) * self.height().max(T::zero())
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        ((self.u_min + self.u_max) * half, (self.v_min + self.v_max) * half)
    }

    /// Inclusive containment test.
    pub fn contains(&self, u: T, v: T) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }

    /// True when `self` covers `other` entirely.
    pub fn encloses(&self, other: &Self) -> bool {
        self.u_min <= other.u_min
            && self.v_min <= other.v_min
            && self.u_max >= other.u_max
            && self.v_max >= other.v_max
    }

    pub fn intersection(&self, other: &Self) -> T {
        let w = self.u_max.min(other.u_max) - self.u_min.max(other.u_min);
        let h = self.v_max.min(other.v_max) - self.v_min.max(other.v_min);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }
}

/// Oriented 3D box: center, extents and heading about +z.
///
/// `l` runs along the heading (local +x), `w` is lateral (local y) and `h`
/// is vertical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3<T> {
    pub center: Point3<T>,
    pub w: T,
    pub l: T,
    pub h: T,
    pub yaw: T,
    pub class_id: u32,
    pub score: T,
}

impl<T: Scalar> Box3<T> {
    /// Builds a validated box, wrapping `yaw` into `[-pi, pi)`.
    pub fn new(center: Point3<T>, size: [T; 3], yaw: T, class_id: u32, score: T) -> Result<Self> {
        let b = Box3 {
            center,
            w: size[0],
            l: size[1],
            h: size[2],
            yaw: normalize_angle(yaw),
            class_id,
            score,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() || !self.yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite pose".into()));
        }
        if !(self.w > T::zero() && self.l > T::zero() && self.h > T::zero()) {
            return Err(Error::InvalidBox(format!(
                "extents must be positive, got w={} l={} h={}",
                self.w, self.l, self.h
            )));
        }
        if !(self.score >= T::zero() && self.score <= T::one()) {
            return Err(Error::InvalidBox(format!("score {} outside [0, 1]", self.score)));
        }
        if self.yaw < -T::PI() || self.yaw >= T::PI() {
            return Err(Error::InvalidBox(format!("yaw {} not normalized", self.yaw)));
        }
        Ok(())
    }

    pub fn size(&self) -> [T; 3] {
        [self.w, self.l, self.h]
    }

    pub fn bottom(&self) -> T {
        self.center.z - self.h * T::lit(0.5)
    }

    pub fn with_score(mut self, score: T) -> Self {
        self.score = score;
        self
    }

    pub fn with_yaw(mut self, yaw: T) -> Self {
        self.yaw = normalize_angle(yaw);
        self
    }

    /// Radius of the BEV footprint's circumscribed circle.
    pub fn bev_radius(&self) -> T {
        self.w.hypot(self.l) * T::lit(0.5)
    }

    /// Corners in the LiDAR frame; bottom four first, counter-clockwise.
    pub fn corners(&self) -> [Point3<T>; 8] {
        let half = T::lit(0.5);
        let (hl, hw, hh) = (self.l * half, self.w * half, self.h * half);
        let local = [
            Point3::new(hl, hw, -hh),
            Point3::new(-hl, hw, -hh),
            Point3::new(-hl, -hw, -hh),
            Point3::new(hl, -hw, -hh),
            Point3::new(hl, hw, hh),
            Point3::new(-hl, hw, hh),
            Point3::new(-hl, -hw, hh),
            Point3::new(hl, -hw, hh),
        ];
        local.map(|p| from_local(p, self))
    }

    pub fn cast<U: Scalar>(&self) -> Box3<U> {
        Box3 {
            center: self.center.cast(),
            w: U::lit(self.w.to_f64_lossy()),
            l: U::lit(self.l.to_f64_lossy()),
            h: U::lit(self.h.to_f64_lossy()),
            yaw: U::lit(self.yaw.to_f64_lossy()),
            class_id: self.class_id,
            score: U::lit(self.score.to_f64_lossy()),
        }
    }
}

/// Expresses `p` in the box frame: `R(-yaw) * (p - center)`.
#[inline]
pub fn to_local<T: Scalar>(p: Point3<T>, b: &Box3<T>) -> Point3<T> {
    let (s, c) = b.yaw.sin_cos();
    let dx = p.x - b.center.x;
    let dy = p.y - b.center.y;
    Point3::new(c * dx + s * dy, -s * dx + c * dy, p.z - b.center.z)
}

/// Inverse of [`to_local`].
#[inline]
pub fn from_local<T: Scalar>(p: Point3<T>, b: &Box3<T>) -> Point3<T> {
    let (s, c) = b.yaw.sin_cos();
    Point3::new(
        c * p.x - s * p.y + b.center.x,
        s * p.x + c * p.y + b.center.y,
        p.z + b.center.z,
    )
}

/// Box membership with inclusive faces.
#[inline]
pub fn in_box<T: Scalar>(p: Point3<T>, b: &Box3<T>) -> bool {
    let q = to_local(p, b);
    let half = T::lit(0.5);
    q.x.abs() <= b.l * half && q.y.abs() <= b.w * half && q.z.abs() <= b.h * half
}

pub fn count_in_box<T: Scalar>(cloud: &PointCloud<T>, b: &Box3<T>) -> usize {
    cloud.points.iter().filter(|p| in_box(**p, b)).count()
}

/// Intersection over union of two image rectangles; 0 when the union is empty.
pub fn iou_2d<T: Scalar>(a: &Box2<T>, b: &Box2<T>) -> T {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}
