//! Derives a reduced ("lite") body model from a source model: delete vertices, close the
//! holes, flatten selected regions and carry every coefficient matrix over by nearest
//! neighbour correspondence.

mod holes;

pub use holes::{boundary_loops, fill_boundary_loops, FillReport};

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{ModelError, ParametricModel};
use crate::geometry::{build_vertex_graph, GeometryError, PointIndex, TriMesh};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("deleting every vertex leaves an empty mesh")]
    EmptyResult,
    #[error("delete id {index} out of range for {count} vertices")]
    DeleteIdOutOfRange { index: usize, count: usize },
    #[error("boundary is not a set of simple loops (at vertex {vertex})")]
    NonSimpleBoundary { vertex: usize },
    #[error("flatten region references vertex {index} but the mesh has {count} vertices")]
    RegionOutOfRange { index: usize, count: usize },
    #[error("flatten step {0} outside (0, 1]")]
    InvalidStep(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One round of delete, fill and flatten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    #[serde(default)]
    pub delete_ids: BTreeSet<usize>,
    /// Vertex sets in the post-deletion indexing.
    #[serde(default)]
    pub flatten_regions: Vec<BTreeSet<usize>>,
    #[serde(default = "TransferSpec::default_iterations")]
    pub flatten_iterations: usize,
    #[serde(default = "TransferSpec::default_step")]
    pub flatten_step: f64,
}

impl TransferSpec {
    fn default_iterations() -> usize {
        10
    }

    fn default_step() -> f64 {
        0.5
    }
}

impl Default for TransferSpec {
    fn default() -> Self {
        Self {
            delete_ids: BTreeSet::new(),
            flatten_regions: Vec::new(),
            flatten_iterations: Self::default_iterations(),
            flatten_step: Self::default_step(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexCorrespondence {
    pub lite_to_source: Vec<usize>,
    pub source_to_lite: Vec<usize>,
}

/// Removes the given vertices and every face touching them. Returns the old-to-new index map.
pub fn delete_vertices<T: Real>(
    mesh: &TriMesh<T>,
    delete_ids: &BTreeSet<usize>,
) -> Result<(TriMesh<T>, Vec<Option<usize>>), TransferError> {
    let n = mesh.num_vertices();
    if let Some(&bad) = delete_ids.range(n..).next() {
        return Err(TransferError::DeleteIdOutOfRange { index: bad, count: n });
    }
    if delete_ids.len() == n {
        return Err(TransferError::EmptyResult);
    }
    let mut map = vec![None; n];
    let mut vertices = Vec::with_capacity(n - delete_ids.len());
    for (v, slot) in map.iter_mut().enumerate() {
        if !delete_ids.contains(&v) {
            *slot = Some(vertices.len());
            vertices.push(mesh.vertices[v]);
        }
    }
    let mut faces = Vec::new();
    let mut uv_faces = mesh.uv_faces.as_ref().map(|_| Vec::new());
    for (fi, f) in mesh.faces.iter().enumerate() {
        if let [Some(a), Some(b), Some(c)] = f.map(|v| map[v]) {
            faces.push([a, b, c]);
            if let (Some(out), Some(src)) = (uv_faces.as_mut(), mesh.uv_faces.as_ref()) {
                out.push(src[fi]);
            }
        }
    }
    let out = TriMesh {
        vertices,
        faces,
        uv_coords: mesh.uv_coords.clone(),
        uv_faces,
        texture_path: mesh.texture_path.clone(),
    };
    out.validate()?;
    Ok((out, map))
}

/// Umbrella smoothing of the region interior with the region's rim (and any mesh-boundary
/// vertex) held fixed. Updates are simultaneous within an iteration.
pub fn flatten_region<T: Real>(
    mesh: &TriMesh<T>,
    region: &BTreeSet<usize>,
    iterations: usize,
    step: T,
) -> Result<TriMesh<T>, TransferError> {
    if !(step > T::zero() && step <= T::one()) {
        return Err(TransferError::InvalidStep(step.as_f64()));
    }
    let n = mesh.num_vertices();
    if let Some(&bad) = region.range(n..).next() {
        return Err(TransferError::RegionOutOfRange { index: bad, count: n });
    }
    let graph = build_vertex_graph(mesh);
    let on_mesh_boundary: BTreeSet<usize> = boundary_vertices(mesh);
    let interior: Vec<usize> = region
        .iter()
        .copied()
        .filter(|&v| {
            !graph.neighbors(v).is_empty()
                && !on_mesh_boundary.contains(&v)
                && graph.neighbors(v).iter().all(|u| region.contains(u))
        })
        .collect();
    let mut vertices = mesh.vertices.clone();
    for _ in 0..iterations {
        let updates: Vec<Vector3<T>> = interior
            .iter()
            .map(|&v| {
                let nb = graph.neighbors(v);
                let mean = nb.iter().fold(Vector3::zeros(), |acc, &u| acc + vertices[u]) / T::from_count(nb.len());
                vertices[v] + (mean - vertices[v]) * step
            })
            .collect();
        for (&v, p) in interior.iter().zip(updates) {
            vertices[v] = p;
        }
    }
    Ok(mesh.with_vertices(vertices))
}

fn boundary_vertices<T: Real>(mesh: &TriMesh<T>) -> BTreeSet<usize> {
    let mut count = std::collections::BTreeMap::new();
    for &[a, b, c] in &mesh.faces {
        for (i, j) in [(a, b), (b, c), (c, a)] {
            *count.entry((i.min(j), i.max(j))).or_insert(0usize) += 1;
        }
    }
    count.into_iter().filter(|&(_, c)| c == 1).flat_map(|((i, j), _)| [i, j]).collect()
}

/// Exact nearest neighbours in both directions; ties go to the lowest index.
pub fn build_correspondence<T: Real>(source: &[Vector3<T>], lite: &[Vector3<T>]) -> VertexCorrespondence {
    let nearest_in = |cloud: &[Vector3<T>], queries: &[Vector3<T>]| -> Vec<usize> {
        let index = PointIndex::new(cloud);
        queries.par_iter().map(|q| index.nearest(q).expect("non-empty cloud").0).collect()
    };
    VertexCorrespondence {
        lite_to_source: nearest_in(source, lite),
        source_to_lite: nearest_in(lite, source),
    }
}

/// Builds the lite model: per-vertex rows copied from each lite vertex's nearest source
/// vertex, regressor columns summed over the source vertices mapped to each lite vertex.
pub fn transfer_coefficients<T: Real>(
    source: &ParametricModel<T>,
    lite_mesh: &TriMesh<T>,
    corr: &VertexCorrespondence,
) -> Result<ParametricModel<T>, TransferError> {
    let nl = lite_mesh.num_vertices();
    let ns = source.num_vertices();
    let dim = |what: &str, expected: usize, found: usize| -> Result<(), TransferError> {
        if expected == found {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch { what: what.into(), expected, found }.into())
        }
    };
    dim("lite_to_source length", nl, corr.lite_to_source.len())?;
    dim("source_to_lite length", ns, corr.source_to_lite.len())?;
    if let Some(&bad) = corr.lite_to_source.iter().find(|&&s| s >= ns) {
        return Err(ModelError::DimensionMismatch { what: "source index".into(), expected: ns, found: bad }.into());
    }
    if let Some(&bad) = corr.source_to_lite.iter().find(|&&l| l >= nl) {
        return Err(ModelError::DimensionMismatch { what: "lite index".into(), expected: nl, found: bad }.into());
    }

    let copy_rows = |m: &DMatrix<T>| {
        let mut out = DMatrix::zeros(3 * nl, m.ncols());
        for (l, &s) in corr.lite_to_source.iter().enumerate() {
            out.rows_mut(3 * l, 3).copy_from(&ParametricModel::vertex_rows(m, s));
        }
        out
    };
    let k = source.num_joints();
    let mut skin_weights = DMatrix::zeros(nl, k);
    let renorm_tol = T::tol(1e-9);
    for (l, &s) in corr.lite_to_source.iter().enumerate() {
        let row = source.skin_weights.row(s);
        let sum = row.sum();
        if (sum - T::one()).abs() > renorm_tol && sum > T::zero() {
            skin_weights.row_mut(l).copy_from(&(row / sum));
        } else {
            skin_weights.row_mut(l).copy_from(&row);
        }
    }
    let mut joint_regressor = DMatrix::zeros(k, nl);
    for (s, &l) in corr.source_to_lite.iter().enumerate() {
        for j in 0..k {
            joint_regressor[(j, l)] += source.joint_regressor[(j, s)];
        }
    }
    let model = ParametricModel {
        name: source.name.clone(),
        template: lite_mesh.vertices.clone(),
        faces: lite_mesh.faces.clone(),
        uv_coords: lite_mesh.uv_coords.clone(),
        uv_faces: lite_mesh.uv_faces.clone(),
        shape_dirs: copy_rows(&source.shape_dirs),
        expr_dirs: copy_rows(&source.expr_dirs),
        pose_dirs: copy_rows(&source.pose_dirs),
        joint_regressor,
        skin_weights,
        parents: source.parents.clone(),
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub vertices_before: usize,
    pub vertices_after: usize,
    pub deleted: usize,
    pub fill: FillReport,
    pub flattened_regions: usize,
    /// Largest nearest-neighbour distance over both correspondence directions (m).
    pub max_correspondence_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub rounds: Vec<RoundReport>,
}

/// Applies the specs in order, each round transferring from the previous round's model.
pub fn apply_transfer<T: Real>(
    model: &ParametricModel<T>,
    specs: &[TransferSpec],
) -> Result<(ParametricModel<T>, TransferReport), TransferError> {
    model.validate()?;
    let mut current = model.clone();
    let mut report = TransferReport::default();
    for spec in specs {
        let mesh = current.template_mesh()?;
        let (deleted, _) = delete_vertices(&mesh, &spec.delete_ids)?;
        let (mut lite, fill) = fill_boundary_loops(&deleted)?;
        for region in &spec.flatten_regions {
            lite = flatten_region(&lite, region, spec.flatten_iterations, T::lit(spec.flatten_step))?;
        }
        let corr = build_correspondence(&current.template, &lite.vertices);
        let max_correspondence_distance = max_pair_distance(&current.template, &lite.vertices, &corr);
        let next = transfer_coefficients(&current, &lite, &corr)?;
        report.rounds.push(RoundReport {
            vertices_before: current.num_vertices(),
            vertices_after: next.num_vertices(),
            deleted: spec.delete_ids.len(),
            fill,
            flattened_regions: spec.flatten_regions.len(),
            max_correspondence_distance,
        });
        current = next;
    }
    Ok((current, report))
}

pub fn max_pair_distance<T: Real>(source: &[Vector3<T>], lite: &[Vector3<T>], corr: &VertexCorrespondence) -> f64 {
    let a = corr.lite_to_source.iter().enumerate().map(|(l, &s)| (lite[l] - source[s]).norm().as_f64());
    let b = corr.source_to_lite.iter().enumerate().map(|(s, &l)| (lite[l] - source[s]).norm().as_f64());
    a.chain(b).fold(0.0, f64::max)
}
