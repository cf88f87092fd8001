//! Parametric avatar toolkit: linear blend skinning body models, model topology
//! transfer, two-stage non-rigid registration of scans, RANSAC multi-view keypoint
//! triangulation and mesh/image evaluation metrics.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below fix the
//! scalar to `f64`, which is what the solvers and the command-line tool use.

pub mod body;
pub mod cli;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod registration;
pub mod rng;
mod scalar;
pub mod sparse;
pub mod synth;
pub mod transfer;
pub mod triangulation;

pub use scalar::Real;

pub type Mesh = geometry::TriMesh<f64>;
pub type Mesh32 = geometry::TriMesh<f32>;
pub type Model = body::ParametricModel<f64>;
pub type Model32 = body::ParametricModel<f32>;
pub type Params = body::BodyParams<f64>;
pub type Camera = triangulation::Camera<f64>;
pub type CameraSet = triangulation::CameraSet<f64>;
pub type Image = eval::Image<f64>;
pub type DeformationGraph = registration::DeformationGraph<f64>;
