//! Pinhole cameras, DLT triangulation and the adaptive RANSAC loop that turns multi-view
//! 2D keypoints into 3D joints.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriangulationError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("degenerate triangulation geometry (singular value ratio {ratio})")]
    DegenerateGeometry { ratio: f64 },
    #[error("{available} confident views, {required} required")]
    InsufficientViews { available: usize, required: usize },
    #[error("no sample reached more than 3 inlier views")]
    NoConsensus,
    #[error("invalid camera {id}: {reason}")]
    InvalidCamera { id: String, reason: String },
    #[error("invalid RANSAC parameters: {0}")]
    InvalidParams(String),
    #[error("frame {frame}: {reason}")]
    InconsistentFrame { frame: u64, reason: String },
}

/// Pinhole camera with world-to-camera extrinsics: `x_cam = R x_world + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T: Real> {
    pub id: String,
    pub k: Matrix3<T>,
    pub r: Matrix3<T>,
    pub t: Vector3<T>,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Camera<T> {
    pub fn validate(&self) -> Result<(), TriangulationError> {
        let bad = |reason: &str| TriangulationError::InvalidCamera { id: self.id.clone(), reason: reason.into() };
        let k = &self.k;
        if k[(1, 0)] != T::zero() || k[(2, 0)] != T::zero() || k[(2, 1)] != T::zero() {
            return Err(bad("K is not upper triangular"));
        }
        if !(k[(0, 0)] > T::zero() && k[(1, 1)] > T::zero() && k[(2, 2)] > T::zero()) {
            return Err(bad("K has a non-positive diagonal"));
        }
        let ortho = (self.r.transpose() * self.r - Matrix3::identity()).abs().max();
        if ortho > T::tol(1e-9) || self.r.determinant() < T::zero() {
            return Err(bad("R is not a rotation"));
        }
        Ok(())
    }

    /// Camera at `eye` whose optical axis points at `target`, image y pointing down along
    /// world `-y` as far as the viewing direction allows.
    pub fn look_at(id: impl Into<String>, eye: Vector3<T>, target: Vector3<T>, k: Matrix3<T>, width: usize, height: usize) -> Self {
        let forward = (target - eye).normalize();
        let world_down = Vector3::new(T::zero(), -T::one(), T::zero());
        let right = world_down.cross(&forward).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self { id: id.into(), k, r, t: -(r * eye), width, height }
    }

    /// `P = K [R | t]`.
    pub fn projection(&self) -> Matrix3x4<T> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        rt.set_column(3, &self.t);
        self.k * rt
    }

    pub fn to_camera(&self, x: &Vector3<T>) -> Vector3<T> {
        self.r * x + self.t
    }

    pub fn center(&self) -> Vector3<T> {
        -(self.r.transpose() * self.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraSet<T: Real> {
    pub cameras: Vec<Camera<T>>,
}

impl<T: Real> CameraSet<T> {
    pub fn validate(&self) -> Result<(), TriangulationError> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.cameras {
            c.validate()?;
            if !seen.insert(c.id.as_str()) {
                return Err(TriangulationError::InvalidCamera { id: c.id.clone(), reason: "duplicate id".into() });
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Camera<T>> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// Perspective division of `P (X, 1)`.
pub fn project<T: Real>(p: &Matrix3x4<T>, x: &Vector3<T>) -> Result<Vector2<T>, TriangulationError> {
    let h = p * Vector4::new(x.x, x.y, x.z, T::one());
    if h.z <= T::zero() {
        return Err(TriangulationError::BehindCamera { depth: h.z.as_f64() });
    }
    Ok(Vector2::new(h.x / h.z, h.y / h.z))
}

const DEGENERATE_RATIO: f64 = 0.99;

/// Homogeneous DLT: the right singular vector of the smallest singular value of the stacked
/// rows `x P₃ − P₁`, `y P₃ − P₂` (each scaled to unit length).
pub fn triangulate_dlt<T: Real>(observations: &[(Matrix3x4<T>, Vector2<T>)]) -> Result<Vector3<T>, TriangulationError> {
    if observations.len() < 2 {
        return Err(TriangulationError::InsufficientViews { available: observations.len(), required: 2 });
    }
    let mut a = DMatrix::zeros(2 * observations.len(), 4);
    for (i, (p, uv)) in observations.iter().enumerate() {
        for (r, (coord, row)) in [(uv.x, 0), (uv.y, 1)].into_iter().enumerate() {
            let line = p.row(2) * coord - p.row(row);
            let norm = line.norm();
            let line = if norm > T::zero() { line / norm } else { line };
            a.row_mut(2 * i + r).copy_from(&line);
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].partial_cmp(&svd.singular_values[j]).unwrap());
    let s_min = svd.singular_values[order[0]];
    let s_second = svd.singular_values[order[1]];
    let s_max = svd.singular_values[order[order.len() - 1]];
    if s_second <= s_max * T::tol(1e-12) {
        return Err(TriangulationError::DegenerateGeometry { ratio: 1.0 });
    }
    let ratio = s_min / s_second;
    if ratio > T::lit(DEGENERATE_RATIO) {
        return Err(TriangulationError::DegenerateGeometry { ratio: ratio.as_f64() });
    }
    let h = v_t.row(order[0]);
    if h[3].abs() <= T::TINY * h.norm() {
        return Err(TriangulationError::DegenerateGeometry { ratio: ratio.as_f64() });
    }
    Ok(Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    /// Reprojection inlier threshold (px).
    pub tau: f64,
    /// RANSAC confidence.
    pub p: f64,
    /// Views drawn per sample.
    pub v: usize,
    pub max_iters_init: usize,
    /// Initial best mean reprojection error (px).
    pub min_error_init: f64,
    /// Views with lower 2D confidence are never sampled nor counted.
    pub conf_min: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { tau: 8.0, p: 0.99, v: 2, max_iters_init: 10_000, min_error_init: 1000.0, conf_min: 0.3, seed: 0 }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), TriangulationError> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(TriangulationError::InvalidParams(format!("p = {} outside (0, 1)", self.p)));
        }
        if self.v < 2 {
            return Err(TriangulationError::InvalidParams(format!("v = {} < 2", self.v)));
        }
        if !(self.tau > 0.0) {
            return Err(TriangulationError::InvalidParams(format!("tau = {} not positive", self.tau)));
        }
        Ok(())
    }

    /// Parameters whose seed is the independent stream of `(frame, joint)`.
    pub fn for_joint(&self, frame: u64, joint: u64) -> Self {
        Self { seed: crate::rng::mix(self.seed, frame, joint), ..self.clone() }
    }
}

/// `⌈log(1 − p) / log(1 − r^v)⌉`, with `r = 1` clamped to a single further iteration.
pub fn adaptive_iterations(p: f64, inlier_ratio: f64, v: usize) -> usize {
    let rv = inlier_ratio.powi(v as i32);
    if rv >= 1.0 {
        return 1;
    }
    let iters = ((1.0 - p).ln() / (-rv).ln_1p()).ceil();
    if iters.is_finite() {
        iters.max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Best estimate for one joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate<T: Real> {
    pub point: Vector3<T>,
    /// Camera indices of the inlier views, ascending.
    pub inliers: Vec<usize>,
    /// Mean reprojection distance over the inliers (px).
    pub mean_error: T,
    /// Reprojection into every camera (`None` when behind it).
    pub reprojections: Vec<Option<Vector2<T>>>,
    pub iterations: usize,
}

/// One joint's observations: `obs[c]` is `(x, y, confidence)` in camera `c`, if detected.
pub fn ransac_triangulate_joint<T: Real>(
    obs: &[Option<[T; 3]>],
    cameras: &CameraSet<T>,
    params: &RansacParams,
) -> Result<JointEstimate<T>, TriangulationError> {
    params.validate()?;
    assert_eq!(obs.len(), cameras.len(), "one observation slot per camera");
    let projections: Vec<Matrix3x4<T>> = cameras.cameras.iter().map(Camera::projection).collect();
    let conf_min = T::lit(params.conf_min);
    let confident: Vec<usize> = (0..obs.len()).filter(|&c| obs[c].is_some_and(|o| o[2] >= conf_min)).collect();
    if confident.len() < params.v {
        return Err(TriangulationError::InsufficientViews { available: confident.len(), required: params.v });
    }
    let uv = |c: usize| {
        let o = obs[c].expect("confident view has an observation");
        Vector2::new(o[0], o[1])
    };
    let dlt = |views: &[usize]| {
        let rows: Vec<_> = views.iter().map(|&c| (projections[c], uv(c))).collect();
        triangulate_dlt(&rows)
    };
    let reproject = |x: &Vector3<T>| -> Vec<Option<Vector2<T>>> {
        projections.iter().map(|p| project(p, x).ok()).collect()
    };
    let tau = T::lit(params.tau);

    let mut rng = crate::rng::seeded(params.seed);
    let mut max_iters = params.max_iters_init;
    let mut best_error = T::lit(params.min_error_init);
    let mut best: Option<JointEstimate<T>> = None;
    let mut i = 0usize;
    while i <= max_iters {
        i += 1;
        let picked: Vec<usize> = sample(&mut rng, confident.len(), params.v).into_iter().map(|k| confident[k]).collect();
        let Ok(x) = dlt(&picked) else { continue };
        let repro = reproject(&x);
        let inliers: Vec<usize> = confident
            .iter()
            .copied()
            .filter(|&c| repro[c].is_some_and(|r| (r - uv(c)).norm() < tau))
            .collect();
        if inliers.len() <= 3 {
            continue;
        }
        let Ok(refined) = dlt(&inliers) else { continue };
        let repro = reproject(&refined);
        let Some(total) = inliers
            .iter()
            .map(|&c| repro[c].map(|r| (r - uv(c)).norm()))
            .try_fold(T::zero(), |acc, d| d.map(|d| acc + d))
        else {
            continue;
        };
        let mean = total / T::from_count(inliers.len());
        if mean < best_error && mean < tau {
            best_error = mean;
            let ratio = inliers.len() as f64 / confident.len() as f64;
            max_iters = adaptive_iterations(params.p, ratio, params.v);
            best = Some(JointEstimate { point: refined, inliers, mean_error: mean, reprojections: repro, iterations: 0 });
        }
    }
    let mut est = best.ok_or(TriangulationError::NoConsensus)?;
    est.iterations = i;
    Ok(est)
}

/// Per-frame 2D detections: camera id to `J` entries of `[x, y, confidence]` (or null).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Frame2D<T: Real> {
    pub frame: u64,
    pub views: BTreeMap<String, Vec<Option<[T; 3]>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Keypoints2D<T: Real> {
    pub frames: Vec<Frame2D<T>>,
}

/// Per-frame estimates; invalid joints are `None` in every per-joint list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Frame3D<T: Real> {
    pub frame: u64,
    pub points: Vec<Option<[T; 3]>>,
    pub inliers: Vec<Option<Vec<String>>>,
    pub errors_px: Vec<Option<T>>,
    /// Camera id to per-joint reprojections.
    pub reprojections: BTreeMap<String, Vec<Option<[T; 2]>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Keypoints3D<T: Real> {
    pub frames: Vec<Frame3D<T>>,
}

fn joint_count<T: Real>(frame: &Frame2D<T>) -> Result<usize, TriangulationError> {
    let mut counts = frame.views.values().map(Vec::len);
    let j = counts.next().unwrap_or(0);
    if counts.any(|c| c != j) {
        return Err(TriangulationError::InconsistentFrame { frame: frame.frame, reason: "joint counts differ across views".into() });
    }
    Ok(j)
}

fn triangulate_frame<T: Real>(
    frame: &Frame2D<T>,
    cameras: &CameraSet<T>,
    params: &RansacParams,
) -> Result<Frame3D<T>, TriangulationError> {
    let j = joint_count(frame)?;
    if let Some(id) = frame.views.keys().find(|id| cameras.get(id).is_none()) {
        return Err(TriangulationError::InconsistentFrame { frame: frame.frame, reason: format!("unknown camera {id}") });
    }
    let mut out = Frame3D {
        frame: frame.frame,
        points: Vec::with_capacity(j),
        inliers: Vec::with_capacity(j),
        errors_px: Vec::with_capacity(j),
        reprojections: cameras.cameras.iter().map(|c| (c.id.clone(), Vec::with_capacity(j))).collect(),
    };
    for joint in 0..j {
        let obs: Vec<Option<[T; 3]>> = cameras
            .cameras
            .iter()
            .map(|c| frame.views.get(&c.id).and_then(|v| v[joint]))
            .collect();
        let est = ransac_triangulate_joint(&obs, cameras, &params.for_joint(frame.frame, joint as u64));
        match est {
            Ok(e) => {
                out.points.push(Some([e.point.x, e.point.y, e.point.z]));
                out.inliers.push(Some(e.inliers.iter().map(|&c| cameras.cameras[c].id.clone()).collect()));
                out.errors_px.push(Some(e.mean_error));
                for (c, r) in cameras.cameras.iter().zip(&e.reprojections) {
                    out.reprojections.get_mut(&c.id).unwrap().push(r.map(|r| [r.x, r.y]));
                }
            }
            Err(TriangulationError::InvalidParams(msg)) => return Err(TriangulationError::InvalidParams(msg)),
            Err(_) => {
                out.points.push(None);
                out.inliers.push(None);
                out.errors_px.push(None);
                for r in out.reprojections.values_mut() {
                    r.push(None);
                }
            }
        }
    }
    Ok(out)
}

/// Runs the per-joint RANSAC on every frame. Failed joints become nulls; frames run in
/// parallel with per-`(frame, joint)` random streams, so thread count never changes results.
pub fn triangulate_sequence<T: Real>(
    k2d: &Keypoints2D<T>,
    cameras: &CameraSet<T>,
    params: &RansacParams,
) -> Result<Keypoints3D<T>, TriangulationError> {
    params.validate()?;
    cameras.validate()?;
    let frames = k2d
        .frames
        .par_iter()
        .map(|f| triangulate_frame(f, cameras, params))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Keypoints3D { frames })
}
