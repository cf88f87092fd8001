//! Shared mesh kernel: indexed triangle meshes, vertex graphs, surface sampling and
//! nearest-point queries.

mod graph;
pub mod primitives;
mod sampling;
mod spatial;

pub use graph::{build_vertex_graph, VertexGraph};
#[cfg(test)]
pub(crate) use graph::tests as graph_tests;
pub use sampling::{sample_surface, SurfaceSamples};
pub use spatial::{
    closest_point_on_triangle, nearest_point_on_surface, Aabb, Bvh, NearestHit, PointIndex,
    SurfaceIndex,
};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

pub type Face = [usize; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("uv face {face} references uv {index} but the mesh has {count} uv coordinates")]
    UvIndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("{uv_faces} uv faces for {faces} faces")]
    UvFaceCountMismatch { faces: usize, uv_faces: usize },
    #[error("uv faces given without uv coordinates (or the reverse)")]
    UvPairing,
    #[error("face {0} is degenerate (all three indices identical)")]
    DegenerateFace(usize),
    #[error("every face of the mesh has zero area")]
    AllFacesDegenerate,
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("vertex {index} out of range for {count} vertices")]
    VertexOutOfRange { index: usize, count: usize },
}

/// Indexed triangle mesh with optional texture coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TriMesh<T: Real> {
    pub vertices: Vec<Vector3<T>>,
    pub faces: Vec<Face>,
    #[serde(default)]
    pub uv_coords: Option<Vec<Vector2<T>>>,
    #[serde(default)]
    pub uv_faces: Option<Vec<Face>>,
    #[serde(default)]
    pub texture_path: Option<String>,
}

impl<T: Real> TriMesh<T> {
    /// Builds a mesh without texture data, checking the index invariants.
    pub fn new(vertices: Vec<Vector3<T>>, faces: Vec<Face>) -> Result<Self, GeometryError> {
        let mesh = Self {
            vertices,
            faces,
            uv_coords: None,
            uv_faces: None,
            texture_path: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_uvs(
        mut self,
        uv_coords: Vec<Vector2<T>>,
        uv_faces: Vec<Face>,
    ) -> Result<Self, GeometryError> {
        self.uv_coords = Some(uv_coords);
        self.uv_faces = Some(uv_faces);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(GeometryError::FaceIndexOutOfRange { face: fi, index: i, count: n });
                }
            }
            if f[0] == f[1] && f[1] == f[2] {
                return Err(GeometryError::DegenerateFace(fi));
            }
        }
        match (&self.uv_coords, &self.uv_faces) {
            (None, None) => {}
            (Some(uvs), Some(uv_faces)) => {
                if uv_faces.len() != self.faces.len() {
                    return Err(GeometryError::UvFaceCountMismatch {
                        faces: self.faces.len(),
                        uv_faces: uv_faces.len(),
                    });
                }
                for (fi, f) in uv_faces.iter().enumerate() {
                    for &i in f {
                        if i >= uvs.len() {
                            return Err(GeometryError::UvIndexOutOfRange {
                                face: fi,
                                index: i,
                                count: uvs.len(),
                            });
                        }
                    }
                }
            }
            _ => return Err(GeometryError::UvPairing),
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn has_uvs(&self) -> bool {
        self.uv_coords.is_some() && self.uv_faces.is_some()
    }

    #[inline]
    pub fn triangle(&self, face: usize) -> [Vector3<T>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal (length = twice the area).
    pub fn face_normal_scaled(&self, face: usize) -> Vector3<T> {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> T {
        self.face_normal_scaled(face).norm() * T::lit(0.5)
    }

    pub fn face_normal(&self, face: usize) -> Vector3<T> {
        let n = self.face_normal_scaled(face);
        let len = n.norm();
        if len > T::zero() {
            n / len
        } else {
            Vector3::zeros()
        }
    }

    pub fn total_area(&self) -> T {
        (0..self.faces.len()).fold(T::zero(), |acc, f| acc + self.face_area(f))
    }

    /// Area-weighted vertex normals; isolated vertices get a zero normal.
    pub fn vertex_normals(&self) -> Vec<Vector3<T>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_normal_scaled(fi);
            for &v in f {
                normals[v] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > T::zero() {
                *n /= len;
            }
        }
        normals
    }

    /// Same connectivity and texture data with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vector3<T>>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len(), "vertex count must not change");
        Self {
            vertices,
            faces: self.faces.clone(),
            uv_coords: self.uv_coords.clone(),
            uv_faces: self.uv_faces.clone(),
            texture_path: self.texture_path.clone(),
        }
    }

    /// Converts the scalar type (e.g. `f32` file data to an `f64` solver mesh).
    pub fn cast<U: Real>(&self) -> TriMesh<U> {
        let conv3 = |v: &Vector3<T>| Vector3::new(U::lit(v.x.as_f64()), U::lit(v.y.as_f64()), U::lit(v.z.as_f64()));
        TriMesh {
            vertices: self.vertices.iter().map(conv3).collect(),
            faces: self.faces.clone(),
            uv_coords: self.uv_coords.as_ref().map(|uvs| {
                uvs.iter()
                    .map(|uv| Vector2::new(U::lit(uv.x.as_f64()), U::lit(uv.y.as_f64())))
                    .collect()
            }),
            uv_faces: self.uv_faces.clone(),
            texture_path: self.texture_path.clone(),
        }
    }

    pub fn bounding_box(&self) -> Option<Aabb<T>> {
        Aabb::from_points(self.vertices.iter())
    }

    /// Undirected edge list, each edge as `(min, max)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Euler characteristic `V - E + F`, counting only vertices referenced by a face.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edges().len() as i64 + self.faces.len() as i64
    }
}
