//! Synthetic ground truth: small articulated models, displaced scans with known `D`, and
//! camera rigs observing posed joints with controlled noise and outliers.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{lbs_forward, BodyParams, ModelError, ParametricModel};
use crate::eval::Image;
use crate::geometry::primitives::{capsule, icosphere};
use crate::geometry::{Face, TriMesh};
use crate::triangulation::{project, Camera, CameraSet, Frame2D, Keypoints2D};
use crate::{rng, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid preset: {0}")]
    InvalidPreset(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Seven joints (pelvis, chest, head, two arms, two legs) over six disjoint closed parts;
    /// the torso carries both pelvis and chest.
    CapsuleBiped,
    /// One capsule along y with `chain_joints` joints in a chain.
    CylinderChain,
    /// Single-joint sphere.
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisplacementSpec {
    /// RMS displacement along the template normals (m).
    pub amplitude: f64,
    /// Spatial frequency of the plane waves (cycles per metre).
    pub frequency: f64,
    pub seed: u64,
}

impl Default for DisplacementSpec {
    fn default() -> Self {
        Self { amplitude: 0.01, frequency: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub n_cameras: usize,
    /// Circle radius (m).
    pub radius: f64,
    pub width: usize,
    pub height: usize,
    /// Focal length (px).
    pub focal: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self { n_cameras: 8, radius: 3.0, width: 4096, height: 3000, focal: 3000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Per-coordinate Gaussian keypoint noise (px).
    pub pixel_sigma: f64,
    /// Fraction of views per joint replaced by outliers.
    pub outlier_fraction: f64,
    /// Outlier offset length (px).
    pub outlier_magnitude: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { pixel_sigma: 1.0, outlier_fraction: 0.0, outlier_magnitude: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthPreset {
    pub kind: SynthKind,
    /// Tessellation level (1 is coarsest).
    pub resolution: usize,
    /// Joint count of `cylinder_chain`.
    pub chain_joints: usize,
    /// Adds two shape, one expression and simple pose-corrective directions.
    pub blend_shapes: bool,
    pub displacement: DisplacementSpec,
    pub rig: RigSpec,
    pub noise: NoiseSpec,
    /// Frames of the keypoint sequence.
    pub frames: usize,
    /// Per-axis half-range of random joint rotations (rad).
    pub pose_scale: f64,
    /// Tessellation factor of generated scans relative to the model.
    pub scan_oversample: usize,
    pub seed: u64,
}

impl Default for SynthPreset {
    fn default() -> Self {
        Self {
            kind: SynthKind::CapsuleBiped,
            resolution: 3,
            chain_joints: 3,
            blend_shapes: false,
            displacement: DisplacementSpec::default(),
            rig: RigSpec::default(),
            noise: NoiseSpec::default(),
            frames: 1,
            pose_scale: 0.3,
            scan_oversample: 4,
            seed: 0,
        }
    }
}

impl SynthPreset {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidPreset(m));
        if self.resolution == 0 || self.scan_oversample == 0 {
            return bad("resolution and scan_oversample must be at least 1".into());
        }
        if self.kind == SynthKind::CylinderChain && self.chain_joints == 0 {
            return bad("chain_joints must be at least 1".into());
        }
        if !(self.displacement.amplitude >= 0.0) {
            return bad(format!("amplitude {} < 0", self.displacement.amplitude));
        }
        if !(self.displacement.frequency > 0.0) {
            return bad(format!("frequency {} not positive", self.displacement.frequency));
        }
        if self.rig.n_cameras < 2 {
            return bad(format!("{} cameras, at least 2 required", self.rig.n_cameras));
        }
        if !(self.rig.radius > 0.0 && self.rig.focal > 0.0) || self.rig.width == 0 || self.rig.height == 0 {
            return bad("rig radius, focal length and image size must be positive".into());
        }
        let n = &self.noise;
        if !(n.outlier_fraction >= 0.0 && n.outlier_fraction < 1.0) {
            return bad(format!("outlier fraction {} outside [0, 1)", n.outlier_fraction));
        }
        if !(n.pixel_sigma >= 0.0 && n.outlier_magnitude >= 0.0) {
            return bad("noise magnitudes must be non-negative".into());
        }
        if !(self.pose_scale >= 0.0) {
            return bad(format!("pose scale {} < 0", self.pose_scale));
        }
        Ok(())
    }
}

/// Icosphere subdivision level whose edge length tracks a capsule tessellated at `res`.
fn ico_level(res: usize) -> usize {
    1 + res.next_power_of_two().trailing_zeros() as usize
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Analytic surface of a part in its local frame, used for exact normals.
#[derive(Clone, Copy)]
enum Shape {
    /// Capsule along y whose cylinder spans `±half`.
    Capsule { half: f64 },
    Sphere,
}

impl Shape {
    fn normal(self, v: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Shape::Capsule { half } => (v - Vector3::new(0.0, v.y.clamp(-half, half), 0.0)).normalize(),
            Shape::Sphere => v.normalize(),
        }
    }
}

/// Accumulates closed parts into one model. Weights, normals and UVs are computed in each
/// part's local frame, where the part's axis is y.
#[derive(Default)]
struct Builder {
    vertices: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    local: Vec<Vector3<f64>>,
    part_of: Vec<usize>,
    faces: Vec<Face>,
    weights: Vec<Vec<(usize, f64)>>,
    regressor: BTreeMap<usize, Vec<(usize, f64)>>,
    parts: usize,
}

impl Builder {
    /// Adds `mesh` (local frame) mapped by `x -> rot * x + offset`; returns the vertex offset.
    fn add(
        &mut self,
        mesh: &TriMesh<f64>,
        shape: Shape,
        rot: Matrix3<f64>,
        offset: Vector3<f64>,
        weight: impl Fn(&Vector3<f64>) -> Vec<(usize, f64)>,
    ) -> usize {
        let base = self.vertices.len();
        for v in &mesh.vertices {
            self.vertices.push(rot * v + offset);
            self.normals.push(rot * shape.normal(v));
            self.local.push(*v);
            self.part_of.push(self.parts);
            self.weights.push(weight(v));
        }
        self.faces.extend(mesh.faces.iter().map(|f| f.map(|i| i + base)));
        self.parts += 1;
        base
    }

    /// Regresses `joint` to the point at local height `y` on the axis of `mesh` (added at
    /// `base`) by blending the centroids of the two rings that bracket `y`. The placement is
    /// exact at every tessellation level.
    fn ring_joint(&mut self, joint: usize, mesh: &TriMesh<f64>, base: usize, y: f64) {
        let off_axis = |i: usize| mesh.vertices[i].x.hypot(mesh.vertices[i].z) > 1e-9;
        let mut heights: Vec<f64> = (0..mesh.num_vertices()).filter(|&i| off_axis(i)).map(|i| mesh.vertices[i].y).collect();
        heights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        heights.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let hi = heights.partition_point(|&h| h < y).min(heights.len() - 1);
        let lo = if heights[hi] <= y { hi } else { hi.saturating_sub(1) };
        let (ylo, yhi) = (heights[lo], heights[hi]);
        let t_hi = if yhi > ylo { (y - ylo) / (yhi - ylo) } else { 1.0 };
        let ring = |h: f64| -> Vec<usize> {
            (0..mesh.num_vertices()).filter(|&i| off_axis(i) && (mesh.vertices[i].y - h).abs() < 1e-12).collect()
        };
        let mut entries = Vec::new();
        for (h, t) in [(ylo, 1.0 - t_hi), (yhi, t_hi)] {
            if t == 0.0 {
                continue;
            }
            let ids = ring(h);
            entries.extend(ids.iter().map(|&i| (i + base, t / ids.len() as f64)));
        }
        self.regressor.insert(joint, entries);
    }

    fn all_joint(&mut self, joint: usize, base: usize, count: usize) {
        self.regressor.insert(joint, (base..base + count).map(|i| (i, 1.0 / count as f64)).collect());
    }

    /// Cylindrical UVs per part, packed into vertical strips of the atlas.
    fn uvs(&self) -> Vec<Vector2<f64>> {
        let mut span = vec![(f64::INFINITY, f64::NEG_INFINITY); self.parts];
        for (v, &p) in self.local.iter().zip(&self.part_of) {
            span[p].0 = span[p].0.min(v.y);
            span[p].1 = span[p].1.max(v.y);
        }
        self.local
            .iter()
            .zip(&self.part_of)
            .map(|(v, &p)| {
                let u = (v.z.atan2(v.x) / std::f64::consts::TAU).rem_euclid(1.0);
                let h = (v.y - span[p].0) / (span[p].1 - span[p].0).max(1e-12);
                Vector2::new((p as f64 + u) / self.parts as f64, h)
            })
            .collect()
    }

    fn finish(self, name: &str, parents: Vec<Option<usize>>, blend_shapes: bool) -> Result<SynthBody, SynthError> {
        let n = self.vertices.len();
        let k = parents.len();
        let mut skin = DMatrix::<f64>::zeros(n, k);
        for (v, row) in self.weights.iter().enumerate() {
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            for &(j, w) in row {
                skin[(v, j)] += w / total;
            }
        }
        let mut regressor = DMatrix::<f64>::zeros(k, n);
        for (&j, entries) in &self.regressor {
            for &(v, w) in entries {
                regressor[(j, v)] += w;
            }
        }
        let uv = self.uvs();
        let normals = self.normals;
        let (shape_dirs, expr_dirs, pose_dirs) = if blend_shapes {
            let mut shape = DMatrix::zeros(3 * n, 2);
            let mut expr = DMatrix::zeros(3 * n, 1);
            let mut pose = DMatrix::zeros(3 * n, 9 * (k - 1));
            for v in 0..n {
                let dominant = (0..k).max_by(|&a, &b| skin[(v, a)].partial_cmp(&skin[(v, b)]).unwrap()).unwrap();
                shape[(3 * v + 1, 0)] = 0.05 * self.vertices[v].y;
                for a in 0..3 {
                    shape[(3 * v + a, 1)] = 0.02 * normals[v][a];
                    if dominant == k - 1 {
                        expr[(3 * v + a, 0)] = 0.01 * normals[v][a];
                    }
                    if dominant > 0 {
                        for d in [0, 4, 8] {
                            pose[(3 * v + a, 9 * (dominant - 1) + d)] = 0.01 * normals[v][a];
                        }
                    }
                }
            }
            (shape, expr, pose)
        } else {
            (DMatrix::zeros(3 * n, 0), DMatrix::zeros(3 * n, 0), DMatrix::zeros(3 * n, 9 * (k - 1)))
        };
        let model = ParametricModel {
            name: name.to_string(),
            template: self.vertices,
            faces: self.faces.clone(),
            uv_coords: Some(uv),
            uv_faces: Some(self.faces),
            shape_dirs,
            expr_dirs,
            pose_dirs,
            joint_regressor: regressor,
            skin_weights: skin,
            parents,
        };
        model.validate()?;
        Ok(SynthBody { model, normals })
    }
}

fn biped(res: usize, blend_shapes: bool) -> Result<SynthBody, SynthError> {
    const PELVIS: usize = 0;
    const CHEST: usize = 1;
    let mut b = Builder::default();
    let id = Matrix3::identity();

    let torso = capsule::<f64>(0.15, 0.4, 12 * res, 3 * res, 5 * res);
    let base = b.add(&torso, Shape::Capsule { half: 0.2 }, id, Vector3::new(0.0, 0.2, 0.0), |v| {
        let t = smoothstep((v.y + 0.15) / 0.3);
        vec![(PELVIS, 1.0 - t), (CHEST, t)]
    });
    b.ring_joint(PELVIS, &torso, base, -0.15);
    b.ring_joint(CHEST, &torso, base, 0.15);

    let head = icosphere::<f64>(ico_level(res), 0.1);
    let base = b.add(&head, Shape::Sphere, id, Vector3::new(0.0, 0.75, 0.0), |_| vec![(2, 1.0)]);
    b.all_joint(2, base, head.num_vertices());

    let arm = capsule::<f64>(0.05, 0.4, 8 * res, 2 * res, 5 * res);
    // local +y (shoulder end at -y) maps to world +x for the left arm and -x for the right
    let to_left = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let to_right = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    for (joint, rot, x) in [(3, to_left, 0.5), (4, to_right, -0.5)] {
        let base = b.add(&arm, Shape::Capsule { half: 0.2 }, rot, Vector3::new(x, 0.4, 0.0), move |v| {
            let t = smoothstep((v.y + 0.2) / 0.15);
            vec![(CHEST, 1.0 - t), (joint, t)]
        });
        b.ring_joint(joint, &arm, base, -0.15);
    }

    let leg = capsule::<f64>(0.06, 0.5, 8 * res, 2 * res, 7 * res);
    for (joint, x) in [(5, 0.1), (6, -0.1)] {
        let base = b.add(&leg, Shape::Capsule { half: 0.25 }, id, Vector3::new(x, -0.55, 0.0), move |v| {
            let t = smoothstep((0.22 - v.y) / 0.15);
            vec![(PELVIS, 1.0 - t), (joint, t)]
        });
        b.ring_joint(joint, &leg, base, 0.17);
    }
    let parents = vec![None, Some(PELVIS), Some(CHEST), Some(CHEST), Some(CHEST), Some(PELVIS), Some(PELVIS)];
    b.finish("capsule_biped", parents, blend_shapes)
}

fn chain(res: usize, joints: usize, blend_shapes: bool) -> Result<SynthBody, SynthError> {
    let length = 0.3 * joints as f64;
    let mesh = capsule::<f64>(0.08, length, 8 * res, 2 * res, 4 * res * joints + 1);
    let centres: Vec<f64> = (0..joints).map(|j| -length / 2.0 + length * (j as f64 + 0.5) / joints as f64).collect();
    let mut b = Builder::default();
    let c = centres.clone();
    let shape = Shape::Capsule { half: length / 2.0 };
    let base = b.add(&mesh, shape, Matrix3::identity(), Vector3::zeros(), move |v| {
        // piecewise-linear hat functions over the joint centres
        if joints == 1 || v.y <= c[0] {
            return vec![(0, 1.0)];
        }
        if v.y >= c[joints - 1] {
            return vec![(joints - 1, 1.0)];
        }
        let j = c.iter().rposition(|&cy| cy <= v.y).unwrap();
        let t = (v.y - c[j]) / (c[j + 1] - c[j]);
        vec![(j, 1.0 - t), (j + 1, t)]
    });
    for (j, &y) in centres.iter().enumerate() {
        b.ring_joint(j, &mesh, base, y);
    }
    let parents = (0..joints).map(|j| j.checked_sub(1)).collect();
    b.finish("cylinder_chain", parents, blend_shapes)
}

fn sphere(res: usize, blend_shapes: bool) -> Result<SynthBody, SynthError> {
    let mesh = icosphere::<f64>(ico_level(res) + 1, 0.5);
    let mut b = Builder::default();
    let base = b.add(&mesh, Shape::Sphere, Matrix3::identity(), Vector3::zeros(), |_| vec![(0, 1.0)]);
    b.all_joint(0, base, mesh.num_vertices());
    b.finish("sphere", vec![None], blend_shapes)
}

/// A synthetic model together with the exact normals of the analytic surface its template
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBody {
    pub model: ParametricModel<f64>,
    pub normals: Vec<Vector3<f64>>,
}

/// Model and analytic normals for a preset.
pub fn make_body(preset: &SynthPreset) -> Result<SynthBody, SynthError> {
    preset.validate()?;
    match preset.kind {
        SynthKind::CapsuleBiped => biped(preset.resolution, preset.blend_shapes),
        SynthKind::CylinderChain => chain(preset.resolution, preset.chain_joints, preset.blend_shapes),
        SynthKind::Sphere => sphere(preset.resolution, preset.blend_shapes),
    }
}

/// Articulated model for a preset, with hand-authored smooth skinning weights and cylindrical
/// UVs. Joints sit exactly on the part axes at every resolution.
pub fn make_model<T: Real>(preset: &SynthPreset) -> Result<ParametricModel<T>, SynthError> {
    Ok(make_body(preset)?.model.cast())
}

/// Random pose (each axis-angle component uniform in `±scale`), shape and expression
/// coefficients drawn from a unit normal. Translation stays zero.
pub fn random_params<T: Real>(model: &ParametricModel<T>, scale: f64, seed: u64) -> BodyParams<T> {
    let mut r = rng::seeded(seed);
    let mut uni = || if scale > 0.0 { T::lit(r.random_range(-scale..=scale)) } else { T::zero() };
    let theta = (0..model.num_joints()).map(|_| Vector3::new(uni(), uni(), uni())).collect();
    let mut r = rng::derived(seed, 1, 0);
    let mut normal = || T::lit(StandardNormal.sample(&mut r));
    let beta = (0..model.shape_dim()).map(|_| normal()).collect();
    let psi = (0..model.expr_dim()).map(|_| normal()).collect();
    BodyParams { theta, beta, psi, transl: Vector3::zeros(), displacement: None }
}

const WAVES: usize = 6;

/// Sum of plane waves of one frequency with seeded directions and phases.
struct WaveField {
    waves: Vec<(Vector3<f64>, f64)>,
    k: f64,
}

impl WaveField {
    fn new(spec: &DisplacementSpec) -> Self {
        let mut r = rng::seeded(spec.seed);
        let waves = (0..WAVES)
            .map(|_| {
                let d: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut r));
                (d.normalize(), r.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        Self { waves, k: std::f64::consts::TAU * spec.frequency }
    }

    fn height(&self, x: &Vector3<f64>) -> f64 {
        self.waves.iter().map(|(d, phase)| (self.k * d.dot(x) + phase).cos()).sum()
    }

    /// Factor that brings the RMS height over `points` to `amplitude`.
    fn scale(&self, points: &[Vector3<f64>], amplitude: f64) -> f64 {
        let ms = points.iter().map(|p| self.height(p).powi(2)).sum::<f64>() / points.len() as f64;
        if ms > 0.0 {
            amplitude / ms.sqrt()
        } else {
            0.0
        }
    }
}

fn displace(points: &[Vector3<f64>], normals: &[Vector3<f64>], field: &WaveField, scale: f64) -> Vec<Vector3<f64>> {
    points.iter().zip(normals).map(|(p, n)| n * (field.height(p) * scale)).collect()
}

/// Band-limited displacement along the template vertex normals: a sum of plane waves of the
/// requested frequency with random directions and phases, scaled to the requested RMS.
pub fn make_displacement<T: Real>(model: &ParametricModel<T>, spec: &DisplacementSpec) -> Result<Vec<Vector3<T>>, SynthError> {
    let template = model.template_mesh().map_err(ModelError::from)?;
    if spec.amplitude == 0.0 {
        return Ok(vec![Vector3::zeros(); model.num_vertices()]);
    }
    let points: Vec<Vector3<f64>> = model.template.iter().map(|v| v.map(|c| c.as_f64())).collect();
    let normals: Vec<Vector3<f64>> = template.vertex_normals().iter().map(|n| n.map(|c| c.as_f64())).collect();
    let field = WaveField::new(spec);
    let d = displace(&points, &normals, &field, field.scale(&points, spec.amplitude));
    Ok(d.iter().map(|v| v.map(T::lit)).collect())
}

/// Posed scan carrying a known displacement, and that displacement.
pub fn make_scan<T: Real>(
    model: &ParametricModel<T>,
    params: &BodyParams<T>,
    spec: &DisplacementSpec,
) -> Result<(TriMesh<T>, Vec<Vector3<T>>), SynthError> {
    let d = make_displacement(model, spec)?;
    let posed = lbs_forward(model, &BodyParams { displacement: Some(d.clone()), ..params.clone() })?;
    let mut scan = model.mesh_with(posed.vertices);
    scan.uv_coords = None;
    scan.uv_faces = None;
    Ok((scan, d))
}

/// Scan of the preset's analytic surface tessellated `oversample` times finer than the model,
/// displaced along exact normals and posed with `params`. Returns the scan and the true
/// displacement at the model's (coarse) vertices; the RMS over those vertices is the
/// requested amplitude.
pub fn make_dense_scan(
    preset: &SynthPreset,
    params: &BodyParams<f64>,
    spec: &DisplacementSpec,
    oversample: usize,
) -> Result<(TriMesh<f64>, Vec<Vector3<f64>>), SynthError> {
    if oversample == 0 {
        return Err(SynthError::InvalidPreset("oversample must be at least 1".into()));
    }
    let coarse = make_body(preset)?;
    let fine = make_body(&SynthPreset { resolution: preset.resolution * oversample, ..preset.clone() })?;
    let field = WaveField::new(spec);
    let scale = field.scale(&coarse.model.template, spec.amplitude);
    let d_coarse = displace(&coarse.model.template, &coarse.normals, &field, scale);
    let d_fine = displace(&fine.model.template, &fine.normals, &field, scale);
    let posed = lbs_forward(&fine.model, &BodyParams { displacement: Some(d_fine), ..params.clone() })?;
    let mut scan = fine.model.mesh_with(posed.vertices);
    scan.uv_coords = None;
    scan.uv_faces = None;
    Ok((scan, d_coarse))
}

/// Ground truth and observations produced by [`make_rig`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRig {
    pub cameras: CameraSet<f64>,
    pub params: Vec<BodyParams<f64>>,
    /// Posed joints per frame.
    pub joints: Vec<Vec<Vector3<f64>>>,
    pub keypoints: Keypoints2D<f64>,
    /// Ids of the cameras whose observation was replaced by an outlier, per frame and joint.
    pub outlier_views: Vec<Vec<Vec<String>>>,
}

/// Cameras evenly spaced on a horizontal circle around the origin, all looking at it.
pub fn make_cameras(spec: &RigSpec) -> CameraSet<f64> {
    let k = Matrix3::new(
        spec.focal,
        0.0,
        spec.width as f64 / 2.0,
        0.0,
        spec.focal,
        spec.height as f64 / 2.0,
        0.0,
        0.0,
        1.0,
    );
    let cameras = (0..spec.n_cameras)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / spec.n_cameras as f64;
            let eye = Vector3::new(spec.radius * a.cos(), 0.0, spec.radius * a.sin());
            Camera::look_at(format!("cam{i:02}"), eye, Vector3::zeros(), k, spec.width, spec.height)
        })
        .collect();
    CameraSet { cameras }
}

/// Random poses of the preset model, their joints, and noisy 2D keypoints in every camera.
pub fn make_rig(preset: &SynthPreset) -> Result<SyntheticRig, SynthError> {
    let model = make_body(preset)?.model;
    let cameras = make_cameras(&preset.rig);
    let noise = &preset.noise;
    let gauss = Normal::new(0.0, noise.pixel_sigma).expect("sigma validated");
    let n_out = (noise.outlier_fraction * cameras.len() as f64).round() as usize;
    let mut out = SyntheticRig {
        cameras,
        params: Vec::new(),
        joints: Vec::new(),
        keypoints: Keypoints2D { frames: Vec::new() },
        outlier_views: Vec::new(),
    };
    for frame in 0..preset.frames as u64 {
        let params = random_params(&model, preset.pose_scale, rng::mix(preset.seed, frame, 0));
        let joints = lbs_forward(&model, &params)?.joints_posed();
        let mut r = rng::derived(preset.seed, frame, 1);
        let mut views: BTreeMap<String, Vec<Option<[f64; 3]>>> =
            out.cameras.cameras.iter().map(|c| (c.id.clone(), Vec::with_capacity(joints.len()))).collect();
        let mut outliers = Vec::with_capacity(joints.len());
        for x in &joints {
            let corrupt: Vec<usize> = sample(&mut r, out.cameras.len(), n_out).into_vec();
            let mut ids = Vec::new();
            for (c, cam) in out.cameras.cameras.iter().enumerate() {
                let mut p = project(&cam.projection(), x).expect("rig cameras face the subject");
                if noise.pixel_sigma > 0.0 {
                    p += Vector2::new(gauss.sample(&mut r), gauss.sample(&mut r));
                }
                if corrupt.contains(&c) {
                    let a = r.random_range(0.0..std::f64::consts::TAU);
                    p += Vector2::new(a.cos(), a.sin()) * noise.outlier_magnitude;
                    ids.push(cam.id.clone());
                }
                views.get_mut(&cam.id).unwrap().push(Some([p.x, p.y, 1.0]));
            }
            ids.sort();
            outliers.push(ids);
        }
        out.keypoints.frames.push(Frame2D { frame, views });
        out.outlier_views.push(outliers);
        out.params.push(params);
        out.joints.push(joints);
    }
    Ok(out)
}

/// Two-colour checkerboard texture.
pub fn checker_texture(size: usize, cells: usize) -> Image<f64> {
    let cell = (size / cells.max(1)).max(1);
    Image::from_fn(size, size, |x, y| {
        if (x / cell + y / cell) % 2 == 0 {
            [0.9, 0.75, 0.6]
        } else {
            [0.2, 0.3, 0.5]
        }
    })
}
