use std::ops::{Add, Mul, Sub};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Point3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Point3 { x, y, z }
    }

    pub fn origin() -> Self {
        Point3::new(T::zero(), T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    /// Distance in the ground plane, ignoring z.
    pub fn bev_distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn bev_norm(&self) -> T {
        self.x.hypot(self.y)
    }

    pub fn cast<U: Scalar>(&self) -> Point3<U> {
        Point3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Scalar> Add for Point3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl<T: Scalar> Sub for Point3<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl<T: Scalar> Mul<T> for Point3<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        Point3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// Index-stable list of LiDAR returns with an optional intensity channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    pub points: Vec<Point3<T>>,
    pub intensity: Option<Vec<T>>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>) -> Self {
        PointCloud {
            points,
            intensity: None,
        }
    }

    pub fn with_intensity(points: Vec<Point3<T>>, intensity: Vec<T>) -> Self {
        debug_assert_eq!(points.len(), intensity.len());
        PointCloud {
            points,
            intensity: Some(intensity),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3<T>> {
        self.points.iter()
    }

    /// Appends points, padding intensity with zeros when the cloud carries one.
    pub fn extend_points(&mut self, points: impl IntoIterator<Item = Point3<T>>) {
        let before = self.points.len();
        self.points.extend(points);
        if let Some(intensity) = self.intensity.as_mut() {
            intensity.resize(self.points.len(), T::zero());
        }
        debug_assert!(self.points.len() >= before);
    }

    /// Keeps the points for which `keep(index, point)` is true, preserving order.
    pub fn retain_indexed(&mut self, mut keep: impl FnMut(usize, &Point3<T>) -> bool) {
        let mask: Vec<bool> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| keep(i, p))
            .collect();
        let mut it = mask.iter();
        self.points.retain(|_| *it.next().unwrap());
        if let Some(intensity) = self.intensity.as_mut() {
            let mut it = mask.iter();
            intensity.retain(|_| *it.next().unwrap());
        }
    }
}
