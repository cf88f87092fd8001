//! File formats: Wavefront OBJ meshes, the `.avm` model container (JSON manifest plus a
//! little-endian tensor blob), calibration, keypoint and parameter JSON, and 8-bit PNG.

mod avm;
mod obj;
mod png;

pub use avm::{read_model, write_model, Dtype, Manifest, TensorEntry};
pub use obj::{format_obj, parse_obj, read_obj, write_obj, ObjWarnings};
pub use png::{read_mask, read_png, write_mask, write_png};

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{BodyParams, ModelError};
use crate::geometry::GeometryError;
use crate::triangulation::{Camera, CameraSet};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("tensor {tensor} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { tensor: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("blob holds {available} bytes but tensor {tensor} needs bytes up to {needed}")]
    BlobTruncated { tensor: String, needed: usize, available: usize },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error("{path}: {message}")]
    Image { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl IoError {
    /// Short machine-readable kind used in CLI error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            IoError::Io { .. } => "io",
            IoError::Parse { .. } => "parse",
            IoError::Manifest(_) => "manifest",
            IoError::ShapeMismatch { .. } => "shape_mismatch",
            IoError::BlobTruncated { .. } => "blob_truncated",
            IoError::Json { .. } => "json",
            IoError::Image { .. } => "image",
            IoError::Invalid(_) => "invalid",
            IoError::Model(_) => "model",
            IoError::Geometry(_) => "geometry",
        }
    }
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json { path: path.display().to_string(), message: e.to_string() })
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    fs::write(path, to_json_string(value)).map_err(|e| io_err(path, e))
}

/// One camera as stored on disk; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    #[serde(rename = "K")]
    pub k: [[f64; 3]; 3],
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
    pub width: usize,
    pub height: usize,
    /// Lens distortion is not modelled; must be `null`.
    #[serde(default)]
    pub dist: Option<serde_json::Value>,
}

/// `{"cameras": [...]}` with world-to-camera extrinsics `x_cam = R x_world + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub cameras: Vec<CameraRecord>,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
}

fn from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

impl CalibrationFile {
    pub fn from_cameras(set: &CameraSet<f64>) -> Self {
        let cameras = set
            .cameras
            .iter()
            .map(|c| CameraRecord {
                id: c.id.clone(),
                k: rows(&c.k),
                r: rows(&c.r),
                t: [c.t.x, c.t.y, c.t.z],
                width: c.width,
                height: c.height,
                dist: None,
            })
            .collect();
        Self { cameras }
    }

    /// Converts and validates every camera.
    pub fn to_cameras(&self) -> Result<CameraSet<f64>, IoError> {
        let mut cameras = Vec::with_capacity(self.cameras.len());
        for c in &self.cameras {
            if c.dist.as_ref().is_some_and(|d| !d.is_null()) {
                return Err(IoError::Invalid(format!("camera {}: lens distortion is not supported", c.id)));
            }
            cameras.push(Camera {
                id: c.id.clone(),
                k: from_rows(&c.k),
                r: from_rows(&c.r),
                t: Vector3::from(c.t),
                width: c.width,
                height: c.height,
            });
        }
        let set = CameraSet { cameras };
        set.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
        Ok(set)
    }
}

pub fn read_cameras(path: &Path) -> Result<CameraSet<f64>, IoError> {
    read_json::<CalibrationFile>(path)?.to_cameras()
}

pub fn write_cameras(path: &Path, cameras: &CameraSet<f64>) -> Result<(), IoError> {
    write_json(path, &CalibrationFile::from_cameras(cameras))
}

/// `{"frames": [{theta, beta, psi, transl}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub frames: Vec<BodyParams<f64>>,
}

impl ParamsFile {
    pub fn frame(&self, i: usize) -> Result<&BodyParams<f64>, IoError> {
        self.frames
            .get(i)
            .ok_or_else(|| IoError::Invalid(format!("frame {i} out of range ({} frames)", self.frames.len())))
    }
}
