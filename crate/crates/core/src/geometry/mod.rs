//! Geometric primitives and kernels shared by every pipeline stage.
//!
//! All types are generic over [`Scalar`](crate::Scalar) so the kernels can
//! run in `f32` for bulk point processing or `f64` where exactness matters.
//! The crate root re-exports `f64` aliases used by the rest of the pipeline.

mod bev;
mod boxes;
mod camera;
mod point;

pub use bev::{bev_polygon, convex_intersection_area, iou_bev, nms, polygon_area};
pub use boxes::{count_in_box, from_local, in_box, iou_2d, to_local, Box2, Box3};
pub use camera::{project_box, project_box_unclamped, project_point, Camera, Projection};
pub use point::{Point3, PointCloud};
