//! Geometry and image metrics: sampled chamfer distance, PSNR, SSIM and an unlit textured
//! rasterizer for producing comparable renders.

mod image;
mod render;

pub use image::{psnr, ssim, Image, Mask, SSIM_WINDOW};
pub use render::render;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sample_surface, GeometryError, PointIndex, SurfaceIndex, TriMesh};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pixel value {0} outside [0, 1]")]
    ValueRange(f64),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("{width}x{height} image is smaller than the {window}x{window} window")]
    TooSmall { width: usize, height: usize, window: usize },
    #[error("mesh has no texture coordinates")]
    MissingUVs,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("at least one sample is required")]
    NoSamples,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Default number of surface samples per mesh.
pub const DEFAULT_SAMPLES: usize = 100_000;

fn mean_distance_to_surface<T: Real>(points: &[Vector3<T>], target: &TriMesh<T>) -> f64 {
    let index = SurfaceIndex::new(target);
    let d: Vec<f64> = points
        .par_iter()
        .map(|p| index.nearest(p).map_or(f64::INFINITY, |h| h.distance.as_f64()))
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Symmetric mean point-to-surface distance (unsquared, in mesh units) from `n` area-uniform
/// samples on each mesh. `a` is sampled with `seed`, `b` with `seed + 1`. Geometrically
/// identical meshes give exactly zero rather than closest-point rounding noise.
pub fn chamfer_distance<T: Real>(a: &TriMesh<T>, b: &TriMesh<T>, n: usize, seed: u64) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::NoSamples);
    }
    if a.num_faces() == 0 || b.num_faces() == 0 {
        return Err(GeometryError::EmptyMesh.into());
    }
    if a.vertices == b.vertices && a.faces == b.faces {
        return Ok(0.0);
    }
    let sa = sample_surface(a, n, seed)?;
    let sb = sample_surface(b, n, seed.wrapping_add(1))?;
    Ok(0.5 * (mean_distance_to_surface(&sa.points, b) + mean_distance_to_surface(&sb.points, a)))
}

/// Symmetric mean nearest-neighbour distance between two point clouds.
pub fn chamfer_points<T: Real>(a: &[Vector3<T>], b: &[Vector3<T>]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::NoSamples);
    }
    let one_way = |from: &[Vector3<T>], to: &[Vector3<T>]| {
        let index = PointIndex::new(to);
        let d: Vec<f64> = from.par_iter().map(|p| index.nearest(p).unwrap().1.as_f64()).collect();
        d.iter().sum::<f64>() / d.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

/// Combined metric record; absent metrics are omitted from JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_infinite: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cd_raw: Option<f64>,
    /// `1000 × cd_raw`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cd_scaled: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_pixels: Option<usize>,
}

impl MetricReport {
    pub fn chamfer(cd_raw: f64, samples: usize) -> Self {
        Self { cd_raw: Some(cd_raw), cd_scaled: Some(1000.0 * cd_raw), samples: Some(samples), ..Self::default() }
    }

    /// PSNR and SSIM for an image pair; an infinite PSNR is reported through the flag only.
    pub fn images<T: Real>(a: &Image<T>, b: &Image<T>, mask: Option<&Mask>) -> Result<Self, EvalError> {
        let p = psnr(a, b, mask)?.as_f64();
        let s = ssim(a, b, mask)?.as_f64();
        Ok(Self {
            psnr_db: p.is_finite().then_some(p),
            psnr_infinite: Some(p.is_infinite()),
            ssim: Some(s),
            masked: Some(mask.is_some()),
            mask_pixels: Some(mask.map_or(a.width * a.height, Mask::count)),
            ..Self::default()
        })
    }
}
