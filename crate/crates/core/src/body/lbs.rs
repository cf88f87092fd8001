use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

use super::{check_dim, BodyParams, ModelError, ParametricModel, RigidTransform};
use crate::Real;

/// Axis-angle to rotation matrix. Angle is the vector norm; the zero vector maps to identity.
pub fn rodrigues<T: Real>(axis_angle: &Vector3<T>) -> Matrix3<T> {
    Rotation3::new(*axis_angle).into_inner()
}

fn add_blend<T: Real>(
    base: &mut [Vector3<T>],
    dirs: &DMatrix<T>,
    coeffs: &[T],
    what: &str,
) -> Result<(), ModelError> {
    check_dim(what, dirs.ncols(), coeffs.len())?;
    if coeffs.is_empty() || coeffs.iter().all(|c| *c == T::zero()) {
        return Ok(());
    }
    let offsets = dirs * DVector::from_column_slice(coeffs);
    for (v, p) in base.iter_mut().enumerate() {
        *p += Vector3::new(offsets[3 * v], offsets[3 * v + 1], offsets[3 * v + 2]);
    }
    Ok(())
}

/// `T̄ + B_S(β) + B_E(ψ)`.
pub fn shaped_template<T: Real>(
    model: &ParametricModel<T>,
    beta: &[T],
    psi: &[T],
) -> Result<Vec<Vector3<T>>, ModelError> {
    let mut verts = model.template.clone();
    add_blend(&mut verts, &model.shape_dirs, beta, "beta")?;
    add_blend(&mut verts, &model.expr_dirs, psi, "psi")?;
    Ok(verts)
}

/// Concatenated `R(θ_k) - I` (row-major) over the non-root joints.
pub fn pose_feature<T: Real>(theta: &[Vector3<T>]) -> DVector<T> {
    let k = theta.len().saturating_sub(1);
    let mut feat = DVector::zeros(9 * k);
    for (j, aa) in theta.iter().enumerate().skip(1) {
        let r = rodrigues(aa) - Matrix3::identity();
        for row in 0..3 {
            for col in 0..3 {
                feat[9 * (j - 1) + 3 * row + col] = r[(row, col)];
            }
        }
    }
    feat
}

/// Rest joint locations `𝒥 · vertices`.
pub fn regress_joints<T: Real>(
    model: &ParametricModel<T>,
    shaped_vertices: &[Vector3<T>],
) -> Result<Vec<Vector3<T>>, ModelError> {
    check_dim("shaped vertices", model.num_vertices(), shaped_vertices.len())?;
    let reg = &model.joint_regressor;
    Ok((0..model.num_joints())
        .map(|k| {
            reg.row(k)
                .iter()
                .zip(shaped_vertices)
                .filter(|(w, _)| **w != T::zero())
                .fold(Vector3::zeros(), |acc, (&w, p)| acc + p * w)
        })
        .collect())
}

/// Displaced T-pose template `T̄ + B_S + B_E + B_P + D`, plus the shape-only template
/// the joints are regressed from.
fn templates<T: Real>(
    model: &ParametricModel<T>,
    params: &BodyParams<T>,
) -> Result<(Vec<Vector3<T>>, Vec<Vector3<T>>), ModelError> {
    params.check(model)?;
    let mut shape_only = model.template.clone();
    add_blend(&mut shape_only, &model.shape_dirs, &params.beta, "beta")?;
    let mut tp = shape_only.clone();
    add_blend(&mut tp, &model.expr_dirs, &params.psi, "psi")?;
    let feat = pose_feature(&params.theta);
    add_blend(&mut tp, &model.pose_dirs, feat.as_slice(), "pose feature")?;
    if let Some(d) = &params.displacement {
        for (p, dv) in tp.iter_mut().zip(d) {
            *p += dv;
        }
    }
    Ok((tp, shape_only))
}

/// `T_P(β, θ, ψ[, D])` before skinning.
pub fn rest_pose_template<T: Real>(
    model: &ParametricModel<T>,
    params: &BodyParams<T>,
) -> Result<Vec<Vector3<T>>, ModelError> {
    templates(model, params).map(|(tp, _)| tp)
}

/// World transform of every joint frame (rotation, posed joint position), composed down
/// the kinematic tree. Does not include `params.transl`.
pub fn world_transforms<T: Real>(
    model: &ParametricModel<T>,
    theta: &[Vector3<T>],
    joints_rest: &[Vector3<T>],
) -> Vec<RigidTransform<T>> {
    let mut out: Vec<RigidTransform<T>> = Vec::with_capacity(model.num_joints());
    for (k, parent) in model.parents.iter().enumerate() {
        let local_rot = rodrigues(&theta[k]);
        let xf = match parent {
            None => RigidTransform { rotation: local_rot, translation: joints_rest[k] },
            Some(p) => out[*p].compose(&RigidTransform {
                rotation: local_rot,
                translation: joints_rest[k] - joints_rest[*p],
            }),
        };
        out.push(xf);
    }
    out
}

/// Per-vertex blended affine map `x -> M_v x + b_v` taking the T-pose template to posed space
/// (global translation included).
pub fn blended_transforms<T: Real>(
    model: &ParametricModel<T>,
    params: &BodyParams<T>,
) -> Result<Vec<(Matrix3<T>, Vector3<T>)>, ModelError> {
    let (_, shape_only) = templates(model, &params.without_displacement())?;
    let joints = regress_joints(model, &shape_only)?;
    Ok(blend_from_joints(model, params, &joints))
}

fn blend_from_joints<T: Real>(
    model: &ParametricModel<T>,
    params: &BodyParams<T>,
    joints: &[Vector3<T>],
) -> Vec<(Matrix3<T>, Vector3<T>)> {
    let world = world_transforms(model, &params.theta, joints);
    // skinning transform: world joint frame applied to coordinates relative to the rest joint
    let skin: Vec<RigidTransform<T>> = world
        .iter()
        .zip(joints)
        .map(|(g, j)| RigidTransform { rotation: g.rotation, translation: g.translation - g.rotation * j })
        .collect();
    (0..model.num_vertices())
        .map(|v| {
            let mut m = Matrix3::zeros();
            let mut b = Vector3::zeros();
            for (k, &w) in model.skin_weights.row(v).iter().enumerate() {
                if w != T::zero() {
                    m += skin[k].rotation * w;
                    b += skin[k].translation * w;
                }
            }
            (m, b + params.transl)
        })
        .collect()
}

/// Output of [`lbs_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PosedResult<T: Real> {
    pub vertices: Vec<Vector3<T>>,
    pub joints_rest: Vec<Vector3<T>>,
    /// World joint frames; translation is the posed joint position.
    pub joint_transforms: Vec<RigidTransform<T>>,
}

impl<T: Real> PosedResult<T> {
    pub fn joints_posed(&self) -> Vec<Vector3<T>> {
        self.joint_transforms.iter().map(|g| g.translation).collect()
    }
}

/// Forward linear blend skinning of the (optionally displaced) template.
pub fn lbs_forward<T: Real>(
    model: &ParametricModel<T>,
    params: &BodyParams<T>,
) -> Result<PosedResult<T>, ModelError> {
    let (tp, shape_only) = templates(model, params)?;
    let joints = regress_joints(model, &shape_only)?;
    let blends = blend_from_joints(model, params, &joints);
    let vertices = tp.iter().zip(&blends).map(|(p, (m, b))| m * p + b).collect();
    let joint_transforms = world_transforms(model, &params.theta, &joints)
        .into_iter()
        .map(|g| RigidTransform { rotation: g.rotation, translation: g.translation + params.transl })
        .collect();
    Ok(PosedResult { vertices, joints_rest: joints, joint_transforms })
}

const MAX_BLEND_CONDITION: f64 = 1e12;

/// Inverts each vertex's blended skinning transform, recovering the displaced T-pose
/// template `T_P` from posed vertices. `params.displacement` is ignored.
pub fn lbs_inverse<T: Real>(
    model: &ParametricModel<T>,
    posed_vertices: &[Vector3<T>],
    params: &BodyParams<T>,
) -> Result<Vec<Vector3<T>>, ModelError> {
    check_dim("posed vertices", model.num_vertices(), posed_vertices.len())?;
    let blends = blended_transforms(model, params)?;
    posed_vertices
        .iter()
        .zip(&blends)
        .enumerate()
        .map(|(v, (y, (m, b)))| {
            let sv = m.svd(false, false).singular_values;
            let (smax, smin) = (sv.max(), sv.min());
            let condition = if smin > T::zero() { (smax / smin).as_f64() } else { f64::INFINITY };
            if !(condition <= MAX_BLEND_CONDITION) {
                return Err(ModelError::SingularBlend { vertex: v, condition });
            }
            let inv = m.try_inverse().ok_or(ModelError::SingularBlend { vertex: v, condition })?;
            Ok(inv * (y - b))
        })
        .collect()
}

/// T-pose displacement `D` that reproduces `posed_vertices` under `params`.
pub fn recover_displacement<T: Real>(
    model: &ParametricModel<T>,
    posed_vertices: &[Vector3<T>],
    params: &BodyParams<T>,
) -> Result<Vec<Vector3<T>>, ModelError> {
    let bare = params.without_displacement();
    let unposed = lbs_inverse(model, posed_vertices, &bare)?;
    let tp = rest_pose_template(model, &bare)?;
    Ok(unposed.iter().zip(&tp).map(|(u, t)| u - t).collect())
}
