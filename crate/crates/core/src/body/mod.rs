//! Parametric body model: template, blend shapes, joint regressor, skinning weights and
//! kinematic tree, plus forward and inverse linear blend skinning.

mod lbs;

pub use lbs::{
    blended_transforms, lbs_forward, lbs_inverse, pose_feature, recover_displacement,
    regress_joints, rest_pose_template, rodrigues, shaped_template, world_transforms,
    PosedResult,
};

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Face, GeometryError, TriMesh};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: String, expected: usize, found: usize },
    #[error("skin weights of vertex {vertex} sum to {sum}")]
    SkinWeightSum { vertex: usize, sum: f64 },
    #[error("skin weight ({vertex}, {joint}) = {value} outside [0, 1]")]
    SkinWeightRange { vertex: usize, joint: usize, value: f64 },
    #[error("invalid kinematic tree: {0}")]
    InvalidParents(String),
    #[error("blended skinning transform of vertex {vertex} is singular (condition number {condition:e})")]
    SingularBlend { vertex: usize, condition: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn check_dim(what: &str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { what: what.to_string(), expected, found })
    }
}

/// Linear blend skinning body model.
///
/// Per-vertex tensors are stored with `3 * N` rows (row `3 * v + axis`), i.e. already
/// reshaped to one row block per vertex. The pose blend shapes take the `9 * (K - 1)`
/// pose feature, so `pose_dirs` has that many columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricModel<T: Real> {
    pub name: String,
    pub template: Vec<Vector3<T>>,
    pub faces: Vec<Face>,
    pub uv_coords: Option<Vec<Vector2<T>>>,
    pub uv_faces: Option<Vec<Face>>,
    /// `3N x |beta|`
    pub shape_dirs: DMatrix<T>,
    /// `3N x |psi|`
    pub expr_dirs: DMatrix<T>,
    /// `3N x 9(K-1)`
    pub pose_dirs: DMatrix<T>,
    /// `K x N`
    pub joint_regressor: DMatrix<T>,
    /// `N x K`
    pub skin_weights: DMatrix<T>,
    /// Parent of each joint; `None` only for joint 0.
    pub parents: Vec<Option<usize>>,
}

impl<T: Real> ParametricModel<T> {
    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_dirs.ncols()
    }

    pub fn expr_dim(&self) -> usize {
        self.expr_dirs.ncols()
    }

    pub fn pose_feature_dim(&self) -> usize {
        9 * self.num_joints().saturating_sub(1)
    }

    /// Checks every structural invariant. Constructors and loaders call this.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.num_vertices();
        let k = self.num_joints();
        if k == 0 {
            return Err(ModelError::InvalidParents("model has no joints".into()));
        }
        self.template_mesh()?;

        check_dim("shape_dirs rows", 3 * n, self.shape_dirs.nrows())?;
        check_dim("expr_dirs rows", 3 * n, self.expr_dirs.nrows())?;
        check_dim("pose_dirs rows", 3 * n, self.pose_dirs.nrows())?;
        check_dim("pose_dirs columns", self.pose_feature_dim(), self.pose_dirs.ncols())?;
        check_dim("joint_regressor rows", k, self.joint_regressor.nrows())?;
        check_dim("joint_regressor columns", n, self.joint_regressor.ncols())?;
        check_dim("skin_weights rows", n, self.skin_weights.nrows())?;
        check_dim("skin_weights columns", k, self.skin_weights.ncols())?;

        if self.parents[0].is_some() {
            return Err(ModelError::InvalidParents("joint 0 must be the root".into()));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                Some(p) => {
                    return Err(ModelError::InvalidParents(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )))
                }
                None => return Err(ModelError::InvalidParents(format!("joint {j} has no parent"))),
            }
        }

        let tol = T::tol(1e-6);
        for v in 0..n {
            let row = self.skin_weights.row(v);
            for (j, &w) in row.iter().enumerate() {
                if w < T::zero() || w > T::one() || !w.is_finite() {
                    return Err(ModelError::SkinWeightRange { vertex: v, joint: j, value: w.as_f64() });
                }
            }
            let sum = row.sum();
            if (sum - T::one()).abs() > tol {
                return Err(ModelError::SkinWeightSum { vertex: v, sum: sum.as_f64() });
            }
        }
        Ok(())
    }

    /// Rest template as a mesh (carries UVs when the model has them).
    pub fn template_mesh(&self) -> Result<TriMesh<T>, GeometryError> {
        let mesh = TriMesh::new(self.template.clone(), self.faces.clone())?;
        match (&self.uv_coords, &self.uv_faces) {
            (Some(uv), Some(uf)) => mesh.with_uvs(uv.clone(), uf.clone()),
            (None, None) => Ok(mesh),
            _ => Err(GeometryError::UvPairing),
        }
    }

    /// Mesh with this model's connectivity and the given vertex positions.
    pub fn mesh_with(&self, vertices: Vec<Vector3<T>>) -> TriMesh<T> {
        TriMesh {
            vertices,
            faces: self.faces.clone(),
            uv_coords: self.uv_coords.clone(),
            uv_faces: self.uv_faces.clone(),
            texture_path: None,
        }
    }

    /// Row block (3 rows) of a per-vertex coefficient tensor.
    pub(crate) fn vertex_rows(m: &DMatrix<T>, v: usize) -> nalgebra::DMatrixView<'_, T> {
        m.rows(3 * v, 3)
    }

    pub fn cast<U: Real>(&self) -> ParametricModel<U> {
        let cm = |m: &DMatrix<T>| m.map(|x| U::lit(x.as_f64()));
        let cv = |v: &Vector3<T>| v.map(|x| U::lit(x.as_f64()));
        ParametricModel {
            name: self.name.clone(),
            template: self.template.iter().map(cv).collect(),
            faces: self.faces.clone(),
            uv_coords: self
                .uv_coords
                .as_ref()
                .map(|uv| uv.iter().map(|p| p.map(|x| U::lit(x.as_f64()))).collect()),
            uv_faces: self.uv_faces.clone(),
            shape_dirs: cm(&self.shape_dirs),
            expr_dirs: cm(&self.expr_dirs),
            pose_dirs: cm(&self.pose_dirs),
            joint_regressor: cm(&self.joint_regressor),
            skin_weights: cm(&self.skin_weights),
            parents: self.parents.clone(),
        }
    }
}

/// Pose, shape, expression and optional per-vertex T-pose displacement.
///
/// `transl` is a global translation applied after skinning (zero by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BodyParams<T: Real> {
    /// Axis-angle per joint (radians); entry 0 is the global orientation.
    pub theta: Vec<Vector3<T>>,
    #[serde(default)]
    pub beta: Vec<T>,
    #[serde(default)]
    pub psi: Vec<T>,
    #[serde(default = "Vector3::zeros")]
    pub transl: Vector3<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacement: Option<Vec<Vector3<T>>>,
}

impl<T: Real> BodyParams<T> {
    /// Rest pose, mean shape, neutral expression.
    pub fn zeros(model: &ParametricModel<T>) -> Self {
        Self {
            theta: vec![Vector3::zeros(); model.num_joints()],
            beta: vec![T::zero(); model.shape_dim()],
            psi: vec![T::zero(); model.expr_dim()],
            transl: Vector3::zeros(),
            displacement: None,
        }
    }

    pub fn without_displacement(&self) -> Self {
        Self { displacement: None, ..self.clone() }
    }

    pub fn check(&self, model: &ParametricModel<T>) -> Result<(), ModelError> {
        check_dim("theta", model.num_joints(), self.theta.len())?;
        check_dim("beta", model.shape_dim(), self.beta.len())?;
        check_dim("psi", model.expr_dim(), self.psi.len())?;
        if let Some(d) = &self.displacement {
            check_dim("displacement", model.num_vertices(), d.len())?;
        }
        Ok(())
    }
}

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RigidTransform<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Inverse assuming an orthonormal rotation.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }
}
