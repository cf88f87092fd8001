use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::TransferError;
use crate::geometry::{Face, TriMesh};
use crate::Real;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FillReport {
    /// Each filled loop, in the vertex order of its boundary half-edges.
    pub loops: Vec<Vec<usize>>,
    pub added_faces: usize,
    /// Loops whose centroid fan folded over and were ear-clipped instead.
    pub ear_clipped_loops: usize,
    /// Indices of new faces whose uv triple points at a single placeholder coordinate.
    pub degenerate_uv_faces: Vec<usize>,
}

/// Boundary loops as cycles of directed half-edges that have no twin.
pub fn boundary_loops<T: Real>(mesh: &TriMesh<T>) -> Result<Vec<Vec<usize>>, TransferError> {
    let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &[a, b, c] in &mesh.faces {
        for e in [(a, b), (b, c), (c, a)] {
            *directed.entry(e).or_default() += 1;
        }
    }
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, b) in directed.keys() {
        if !directed.contains_key(&(b, a)) && next.insert(a, b).is_some() {
            return Err(TransferError::NonSimpleBoundary { vertex: a });
        }
    }
    let mut loops = Vec::new();
    while let Some((&start, _)) = next.first_key_value() {
        let mut cycle = vec![start];
        let mut cur = next.remove(&start).unwrap();
        while cur != start {
            if cycle.len() > mesh.num_vertices() {
                return Err(TransferError::NonSimpleBoundary { vertex: cur });
            }
            cycle.push(cur);
            cur = next.remove(&cur).ok_or(TransferError::NonSimpleBoundary { vertex: cur })?;
        }
        if cycle.len() < 3 {
            return Err(TransferError::NonSimpleBoundary { vertex: start });
        }
        loops.push(cycle);
    }
    Ok(loops)
}

fn cross2<T: Real>(o: &Vector2<T>, a: &Vector2<T>, b: &Vector2<T>) -> T {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn project_polygon<T: Real>(pts: &[Vector3<T>]) -> Vec<Vector2<T>> {
    // Newell normal of the polygon in the given order
    let mut n = Vector3::zeros();
    for i in 0..pts.len() {
        let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
        n += Vector3::new((p.y - q.y) * (p.z + q.z), (p.z - q.z) * (p.x + q.x), (p.x - q.x) * (p.y + q.y));
    }
    let n = if n.norm() > T::TINY { n.normalize() } else { Vector3::z() };
    let helper = if n.x.abs() < T::lit(0.9) { Vector3::x() } else { Vector3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    pts.iter().map(|p| Vector2::new(p.dot(&e1), p.dot(&e2))).collect()
}

fn inside_triangle<T: Real>(p: &Vector2<T>, a: &Vector2<T>, b: &Vector2<T>, c: &Vector2<T>) -> bool {
    cross2(a, b, p) >= T::zero() && cross2(b, c, p) >= T::zero() && cross2(c, a, p) >= T::zero()
}

/// Ear clipping of a counter-clockwise polygon; returns local index triples.
fn ear_clip<T: Real>(poly: &[Vector2<T>]) -> Vec<[usize; 3]> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut tris = Vec::with_capacity(poly.len() - 2);
    while idx.len() > 3 {
        let m = idx.len();
        let is_ear = |i: usize| {
            let (a, b, c) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
            if cross2(&poly[a], &poly[b], &poly[c]) <= T::zero() {
                return false;
            }
            idx.iter()
                .filter(|&&o| o != a && o != b && o != c)
                .all(|&o| !inside_triangle(&poly[o], &poly[a], &poly[b], &poly[c]))
        };
        let ear = (0..m).find(|&i| is_ear(i)).unwrap_or_else(|| {
            // no proper ear (numerically degenerate outline): clip the most convex corner
            (0..m)
                .max_by(|&i, &j| {
                    let ci = cross2(&poly[idx[(i + m - 1) % m]], &poly[idx[i]], &poly[idx[(i + 1) % m]]);
                    let cj = cross2(&poly[idx[(j + m - 1) % m]], &poly[idx[j]], &poly[idx[(j + 1) % m]]);
                    ci.partial_cmp(&cj).unwrap_or(std::cmp::Ordering::Equal).then(j.cmp(&i))
                })
                .unwrap()
        });
        tris.push([idx[(ear + m - 1) % m], idx[ear], idx[(ear + 1) % m]]);
        idx.remove(ear);
    }
    tris.push([idx[0], idx[1], idx[2]]);
    tris
}

/// Triangulates one hole. `ring` runs opposite to the boundary half-edges, so the new
/// faces are consistently oriented with the surrounding surface.
fn triangulate_hole<T: Real>(vertices: &[Vector3<T>], ring: &[usize]) -> (Vec<Face>, bool) {
    let pts: Vec<Vector3<T>> = ring.iter().map(|&v| vertices[v]).collect();
    let m = ring.len();
    if m == 3 {
        return (vec![[ring[0], ring[1], ring[2]]], false);
    }
    let centroid = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p) / T::from_count(m);
    let mut apex = 0;
    for i in 1..m {
        if (pts[i] - centroid).norm_squared() < (pts[apex] - centroid).norm_squared() {
            apex = i;
        }
    }
    let flat = project_polygon(&pts);
    let fan: Vec<[usize; 3]> = (1..m - 1).map(|s| [apex, (apex + s) % m, (apex + s + 1) % m]).collect();
    let fan_ok = fan.iter().all(|t| cross2(&flat[t[0]], &flat[t[1]], &flat[t[2]]) > T::zero());
    let (local, clipped) = if fan_ok { (fan, false) } else { (ear_clip(&flat), true) };
    (local.iter().map(|t| [ring[t[0]], ring[t[1]], ring[t[2]]]).collect(), clipped)
}

/// Closes every boundary loop with new faces; existing vertices and faces are untouched.
pub fn fill_boundary_loops<T: Real>(mesh: &TriMesh<T>) -> Result<(TriMesh<T>, FillReport), TransferError> {
    let loops = boundary_loops(mesh)?;
    let mut out = mesh.clone();
    let mut report = FillReport::default();
    let placeholder_uv = out.uv_coords.as_mut().map(|uvs| {
        uvs.push(Vector2::zeros());
        uvs.len() - 1
    });
    if loops.is_empty() {
        if placeholder_uv.is_some() {
            out.uv_coords.as_mut().unwrap().pop();
        }
        return Ok((out, report));
    }
    for cycle in &loops {
        let ring: Vec<usize> = cycle.iter().rev().copied().collect();
        let (faces, clipped) = triangulate_hole(&mesh.vertices, &ring);
        report.ear_clipped_loops += usize::from(clipped);
        report.added_faces += faces.len();
        for f in faces {
            if let (Some(u), Some(uv_faces)) = (placeholder_uv, out.uv_faces.as_mut()) {
                report.degenerate_uv_faces.push(out.faces.len());
                uv_faces.push([u, u, u]);
            }
            out.faces.push(f);
        }
    }
    report.loops = loops;
    out.validate()?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{grid, icosphere};
    use crate::transfer::delete_vertices;
    use std::collections::BTreeSet;

    #[test]
    fn closed_mesh_is_unchanged() {
        let m = icosphere::<f64>(1, 1.0);
        let (out, report) = fill_boundary_loops(&m).unwrap();
        assert_eq!(out, m);
        assert_eq!(report.added_faces, 0);
    }

    #[test]
    fn square_hole_gets_two_triangles() {
        // 4x4 grid with the middle cell's two triangles removed leaves a square hole
        let mut m = grid::<f64>(4, 4, 1.0);
        let cell = 2 * 4;
        m.faces.drain(cell..cell + 2);
        let before = m.num_faces();
        let (out, report) = fill_boundary_loops(&m).unwrap();
        // the outer rim is also a loop; the inner square adds 2 of the total
        assert_eq!(report.loops.len(), 2);
        let inner = report.loops.iter().find(|l| l.len() == 4).unwrap();
        assert_eq!(inner.iter().copied().collect::<BTreeSet<_>>(), BTreeSet::from([5, 6, 9, 10]));
        assert_eq!(out.num_faces() - before, report.added_faces);
        assert_eq!(report.added_faces, 2 + (12 - 2));
    }

    #[test]
    fn planar_ngon_hole_closes_sphere() {
        for n_ring in [1usize, 2] {
            let sphere = icosphere::<f64>(2, 1.0);
            // remove a cap: every vertex with y above a threshold
            let cap: BTreeSet<usize> = (0..sphere.num_vertices())
                .filter(|&v| sphere.vertices[v].y > 0.95 - 0.1 * n_ring as f64)
                .collect();
            let (holed, _) = delete_vertices(&sphere, &cap).unwrap();
            let loops = boundary_loops(&holed).unwrap();
            assert_eq!(loops.len(), 1);
            let n = loops[0].len();
            let (closed, report) = fill_boundary_loops(&holed).unwrap();
            assert_eq!(report.added_faces, n - 2);
            assert_eq!(closed.euler_characteristic(), 2);
            assert!(boundary_loops(&closed).unwrap().is_empty());
            // new faces face outward like the rest of the sphere
            for f in holed.num_faces()..closed.num_faces() {
                assert!(closed.face_normal(f).y > 0.0);
            }
        }
    }

    #[test]
    fn non_convex_loop_is_ear_clipped() {
        // U-shaped outline: the fan from the centroid-closest corner would cross the notch
        let pts = [(0.0, 0.0), (3.0, 0.0), (3.0, 3.0), (2.0, 3.0), (2.0, 1.0), (1.0, 1.0), (1.0, 3.0), (0.0, 3.0)];
        let vertices: Vec<Vector3<f64>> = pts.iter().map(|&(x, y)| Vector3::new(x, y, 0.0)).collect();
        let ring: Vec<usize> = (0..pts.len()).collect();
        let flat = project_polygon(&vertices);
        let (faces, clipped) = triangulate_hole(&vertices, &ring);
        assert!(clipped);
        assert_eq!(faces.len(), 6);
        let areas: Vec<f64> = faces.iter().map(|f| cross2(&flat[f[0]], &flat[f[1]], &flat[f[2]]) / 2.0).collect();
        assert!(areas.iter().all(|&a| a > 0.0));
        assert!((areas.iter().sum::<f64>() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn bowtie_boundary_is_rejected() {
        // two triangles sharing only vertex 0
        let v = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(-1.0, -1.0, 0.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [0, 3, 4]]).unwrap();
        assert!(matches!(fill_boundary_loops(&m), Err(TransferError::NonSimpleBoundary { .. })));
    }

    #[test]
    fn hole_faces_get_flagged_placeholder_uvs() {
        let sphere = icosphere::<f64>(1, 1.0);
        let uvs = vec![Vector2::new(0.5, 0.5); sphere.num_vertices()];
        let uv_faces = sphere.faces.clone();
        let sphere = sphere.with_uvs(uvs, uv_faces).unwrap();
        let (holed, _) = delete_vertices(&sphere, &BTreeSet::from([0])).unwrap();
        let (closed, report) = fill_boundary_loops(&holed).unwrap();
        assert_eq!(report.degenerate_uv_faces.len(), report.added_faces);
        let uv_faces = closed.uv_faces.as_ref().unwrap();
        for &f in &report.degenerate_uv_faces {
            let [a, b, c] = uv_faces[f];
            assert!(a == b && b == c && a == closed.uv_coords.as_ref().unwrap().len() - 1);
        }
    }
}
