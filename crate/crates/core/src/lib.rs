//! Open-vocabulary 3D proposal generation from 2D detections.
//!
//! The pipeline lifts every 2D detection into a camera frustum, enumerates a
//! grid of anchor placements inside it ([`seeker`]), keeps the placement with
//! the best point-density and re-projection agreement ([`oracle`]), and then
//! spreads the discovered instances to sparse and distant regions through a
//! memory bank with copy-paste simulators ([`propagator`]) driven by an
//! iterative self-training loop ([`selftrain`]).
//!
//! Geometry is generic over [`Scalar`]; the pipeline stages work in `f64`
//! through the aliases below.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod propagator;
mod scalar;
pub mod seeding;
pub mod seeker;
pub mod selftrain;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::{normalize_angle, yaw_error_mod_pi, Scalar};

pub type Point3D = geometry::Point3<f64>;
pub type Cloud = geometry::PointCloud<f64>;
pub type Box3D = geometry::Box3<f64>;
pub type Box2D = geometry::Box2<f64>;
pub type CameraModel = geometry::Camera<f64>;

pub type Point3F = geometry::Point3<f32>;
pub type CloudF = geometry::PointCloud<f32>;
pub type Box3F = geometry::Box3<f32>;
