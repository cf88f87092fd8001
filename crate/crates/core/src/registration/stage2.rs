//! Laplacian-regularized per-vertex shifts toward the scan.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::matching::ScanTarget;
use super::{RegistrationError, Stage2Config};
use crate::geometry::{build_vertex_graph, TriMesh};
use crate::sparse::{pcg, residual_norm, CsrMatrix, Jacobi};
use crate::Real;

const CG_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub lambda: f64,
    pub matched: usize,
    pub unmatched: usize,
    /// CG iterations per coordinate.
    pub cg_iterations: [usize; 3],
    /// Explicit `‖b − A d‖ / ‖b‖` per coordinate.
    pub relative_residuals: [f64; 3],
    /// `Σ_v m_v ‖v + d_v − c_v‖²`.
    pub data_residual: f64,
    /// `‖L d‖` (Frobenius over the three coordinates).
    pub laplacian_norm: f64,
}

/// Uniform umbrella Laplacian: `(L x)_i = x_i − mean_{j ∈ N(i)} x_j`; isolated vertices get a
/// zero row.
pub fn umbrella_laplacian<T: Real>(mesh: &TriMesh<T>) -> CsrMatrix<T> {
    let graph = build_vertex_graph(mesh);
    let n = mesh.num_vertices();
    let mut triplets = Vec::new();
    for i in 0..n {
        let nb = graph.neighbors(i);
        if nb.is_empty() {
            continue;
        }
        let w = T::one() / T::from_count(nb.len());
        triplets.push((i, i, T::one()));
        for &j in nb {
            triplets.push((i, j, -w));
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

/// Normal-equation matrix `M + λ LᵀL` and right-hand sides `M (c − v)` per coordinate.
pub fn shift_system<T: Real>(
    mesh: &TriMesh<T>,
    targets: &[Option<Vector3<T>>],
    lambda: T,
) -> (CsrMatrix<T>, [Vec<T>; 3]) {
    let n = mesh.num_vertices();
    let mut triplets = Vec::new();
    if lambda != T::zero() {
        let lap = umbrella_laplacian(mesh).gram();
        for r in 0..n {
            for (c, v) in lap.row(r) {
                triplets.push((r, c, lambda * v));
            }
        }
    }
    let mut rhs = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
    for (v, t) in targets.iter().enumerate() {
        if let Some(c) = t {
            triplets.push((v, v, T::one()));
            let d = c - mesh.vertices[v];
            for a in 0..3 {
                rhs[a][v] = d[a];
            }
        }
    }
    (CsrMatrix::from_triplets(n, n, triplets), rhs)
}

fn check_solvable<T: Real>(mesh: &TriMesh<T>, targets: &[Option<Vector3<T>>], lambda: T) -> Result<(), RegistrationError> {
    let n = mesh.num_vertices();
    if lambda == T::zero() {
        return match targets.iter().position(Option::is_none) {
            Some(v) => Err(RegistrationError::SingularSystem(format!("lambda = 0 and vertex {v} is unmatched"))),
            None => Ok(()),
        };
    }
    // union-find over mesh edges; every component needs one matched vertex
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, j) in mesh.edges() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut anchored = vec![false; n];
    for (v, t) in targets.iter().enumerate() {
        if t.is_some() {
            let r = find(&mut parent, v);
            anchored[r] = true;
        }
    }
    for v in 0..n {
        let r = find(&mut parent, v);
        if !anchored[r] {
            return Err(RegistrationError::SingularSystem(format!(
                "the connected component of vertex {v} has no matched vertex"
            )));
        }
    }
    Ok(())
}

/// Solves `min_d Σ_v m_v ‖v + d_v − c_v‖² + λ ‖L d‖²` for explicit targets.
pub fn solve_shifts<T: Real>(
    mesh: &TriMesh<T>,
    targets: &[Option<Vector3<T>>],
    lambda: T,
) -> Result<(Vec<Vector3<T>>, Stage2Report), RegistrationError> {
    let n = mesh.num_vertices();
    assert_eq!(targets.len(), n);
    if lambda < T::zero() {
        return Err(RegistrationError::InvalidConfig(format!("laplacian weight {lambda} < 0")));
    }
    check_solvable(mesh, targets, lambda)?;
    let (a, rhs) = shift_system(mesh, targets, lambda);
    let precond = Jacobi::new(&a);
    let mut d = vec![Vector3::zeros(); n];
    let mut iterations = [0; 3];
    let mut residuals = [0.0; 3];
    for axis in 0..3 {
        let mut x = vec![T::zero(); n];
        let out = pcg(&a, &rhs[axis], &mut x, &precond, T::tol(CG_REL_TOL), 50 * n + 1000);
        iterations[axis] = out.iterations;
        residuals[axis] = out.relative_residual.as_f64();
        for (dv, xv) in d.iter_mut().zip(x) {
            dv[axis] = xv;
        }
    }
    let data_residual = targets
        .iter()
        .zip(&mesh.vertices)
        .zip(&d)
        .filter_map(|((t, v), dv)| t.map(|c| (v + dv - c).norm_squared().as_f64()))
        .sum();
    let lap = umbrella_laplacian(mesh);
    let mut laplacian_sq = 0.0;
    for axis in 0..3 {
        let x: Vec<T> = d.iter().map(|v| v[axis]).collect();
        let mut lx = vec![T::zero(); n];
        lap.mul_vec(&x, &mut lx);
        laplacian_sq += lx.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
    }
    let matched = targets.iter().filter(|t| t.is_some()).count();
    Ok((
        d,
        Stage2Report {
            lambda: lambda.as_f64(),
            matched,
            unmatched: n - matched,
            cg_iterations: iterations,
            relative_residuals: residuals,
            data_residual,
            laplacian_norm: laplacian_sq.sqrt(),
        },
    ))
}

/// Relative normal-equation residual of a shift field, recomputed from scratch.
pub fn shift_residual<T: Real>(mesh: &TriMesh<T>, targets: &[Option<Vector3<T>>], lambda: T, d: &[Vector3<T>]) -> [f64; 3] {
    let (a, rhs) = shift_system(mesh, targets, lambda);
    let mut out = [0.0; 3];
    for axis in 0..3 {
        let x: Vec<T> = d.iter().map(|v| v[axis]).collect();
        let b_norm = rhs[axis].iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        let r = residual_norm(&a, &x, &rhs[axis]).as_f64();
        out[axis] = if b_norm > 0.0 { r / b_norm } else { r };
    }
    out
}

/// Nearest-point targets on the scan for every vertex of `mesh`, pruned per `cfg`.
pub fn stage2_targets<T: Real>(mesh: &TriMesh<T>, scan: &TriMesh<T>, cfg: &Stage2Config) -> Vec<Option<Vector3<T>>> {
    ScanTarget::new(scan)
        .matches(
            &mesh.vertices,
            &mesh.vertex_normals(),
            T::lit(cfg.correspondence_max_dist),
            T::lit(cfg.normal_angle_max),
        )
        .into_iter()
        .map(|m| m.map(|m| m.point))
        .collect()
}

pub fn solve_stage2<T: Real>(
    mesh: &TriMesh<T>,
    scan: &TriMesh<T>,
    cfg: &Stage2Config,
) -> Result<(TriMesh<T>, Stage2Report), RegistrationError> {
    let targets = stage2_targets(mesh, scan, cfg);
    if targets.iter().all(Option::is_none) {
        return Err(RegistrationError::NoCorrespondences);
    }
    let (d, report) = solve_shifts(mesh, &targets, T::lit(cfg.laplacian_weight))?;
    let vertices = mesh.vertices.iter().zip(&d).map(|(v, dv)| v + dv).collect();
    Ok((mesh.with_vertices(vertices), report))
}
