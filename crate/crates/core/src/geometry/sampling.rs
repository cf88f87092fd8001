use nalgebra::Vector3;
use rand::Rng as _;

use crate::geometry::{GeometryError, TriMesh};
use crate::{rng, Real};

/// Points drawn on a mesh surface together with their source face and barycentrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples<T: Real> {
    pub points: Vec<Vector3<T>>,
    pub face_ids: Vec<usize>,
    pub barycentrics: Vec<[T; 3]>,
}

impl<T: Real> SurfaceSamples<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `n` area-uniform points. Deterministic for a fixed `seed`.
///
/// Faces are picked by inverting the cumulative area table; inside a face `(u, v)` is
/// drawn on the unit square and reflected into the lower triangle.
pub fn sample_surface<T: Real>(
    mesh: &TriMesh<T>,
    n: usize,
    seed: u64,
) -> Result<SurfaceSamples<T>, GeometryError> {
    let mut cumulative = Vec::with_capacity(mesh.num_faces());
    let mut total = 0.0f64;
    for f in 0..mesh.num_faces() {
        total += mesh.face_area(f).as_f64();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(GeometryError::AllFacesDegenerate);
    }

    let mut rng = rng::seeded(seed);
    let mut out = SurfaceSamples {
        points: Vec::with_capacity(n),
        face_ids: Vec::with_capacity(n),
        barycentrics: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let mut face = cumulative.partition_point(|&c| c <= target);
        // guard the rounding edge and skip zero-area faces sitting at the boundary
        face = face.min(cumulative.len() - 1);
        while face > 0 && mesh.face_area(face) == T::zero() {
            face -= 1;
        }
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let w = 1.0 - u - v;
        let bary = [T::lit(w), T::lit(u), T::lit(v)];
        let [a, b, c] = mesh.triangle(face);
        out.points.push(a * bary[0] + b * bary[1] + c * bary[2]);
        out.face_ids.push(face);
        out.barycentrics.push(bary);
    }
    Ok(out)
}
