use nalgebra::Vector3;
use rayon::prelude::*;

use crate::geometry::{SurfaceIndex, TriMesh};
use crate::Real;

/// Closest-point target on the scan that survived pruning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Match<T: Real> {
    pub point: Vector3<T>,
    pub normal: Vector3<T>,
}

/// Scan with its closest-point index and face normals, built once per solve.
pub(crate) struct ScanTarget<T: Real> {
    index: SurfaceIndex<T>,
    face_normals: Vec<Vector3<T>>,
}

impl<T: Real> ScanTarget<T> {
    pub fn new(scan: &TriMesh<T>) -> Self {
        Self {
            index: SurfaceIndex::new(scan),
            face_normals: (0..scan.num_faces()).map(|f| scan.face_normal(f)).collect(),
        }
    }

    /// Nearest scan point per vertex, dropped when farther than `max_dist` or when the
    /// vertex normal and the scan face normal differ by more than `max_angle_deg`.
    /// Vertices without a normal skip the angle test.
    pub fn matches(
        &self,
        points: &[Vector3<T>],
        normals: &[Vector3<T>],
        max_dist: T,
        max_angle_deg: T,
    ) -> Vec<Option<Match<T>>> {
        let cos_max = (max_angle_deg * T::pi() / T::lit(180.0)).cos();
        points
            .par_iter()
            .zip(normals.par_iter())
            .map(|(p, n)| {
                let hit = self.index.nearest(p)?;
                if hit.distance > max_dist {
                    return None;
                }
                let normal = self.face_normals[hit.face];
                if n.norm_squared() > T::zero() && n.dot(&normal) < cos_max {
                    return None;
                }
                Some(Match { point: hit.point, normal })
            })
            .collect()
    }
}
