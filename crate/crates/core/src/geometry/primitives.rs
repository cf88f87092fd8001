//! Procedural closed meshes used by the synthetic generators and tests.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::geometry::{Face, TriMesh};
use crate::Real;

/// Subdivided icosahedron projected to a sphere, outward-facing.
pub fn icosphere<T: Real>(subdivisions: usize, radius: T) -> TriMesh<T> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<Face> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = verts.iter().map(|v| v.map(T::lit) * radius).collect();
    TriMesh::new(vertices, faces).expect("icosphere is valid")
}

/// Capsule along +y centred at the origin: a cylinder of `length` capped by hemispheres.
///
/// Rings run top to bottom with `segments` vertices each, plus one pole vertex per cap.
pub fn capsule<T: Real>(radius: f64, length: f64, segments: usize, cap_rings: usize, body_rings: usize) -> TriMesh<T> {
    assert!(segments >= 3 && cap_rings >= 1 && body_rings >= 2);
    let half = length / 2.0;
    // (ring radius, y)
    let mut rings: Vec<(f64, f64)> = Vec::new();
    for i in 1..=cap_rings {
        let phi = std::f64::consts::FRAC_PI_2 * i as f64 / cap_rings as f64;
        rings.push((radius * phi.sin(), half + radius * phi.cos()));
    }
    for i in 1..body_rings - 1 {
        let y = half - length * i as f64 / (body_rings - 1) as f64;
        rings.push((radius, y));
    }
    for i in (1..=cap_rings).rev() {
        let phi = std::f64::consts::FRAC_PI_2 * i as f64 / cap_rings as f64;
        rings.push((radius * phi.sin(), -half - radius * phi.cos()));
    }
    let mut verts = vec![Vector3::new(0.0, half + radius, 0.0)];
    for &(r, y) in &rings {
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            verts.push(Vector3::new(r * a.cos(), y, -r * a.sin()));
        }
    }
    let bottom = verts.len();
    verts.push(Vector3::new(0.0, -half - radius, 0.0));

    let ring_start = |r: usize| 1 + r * segments;
    let mut faces = Vec::new();
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        faces.push([0, ring_start(0) + s, ring_start(0) + s1]);
    }
    for r in 0..rings.len() - 1 {
        for s in 0..segments {
            let s1 = (s + 1) % segments;
            let (a, b) = (ring_start(r) + s, ring_start(r) + s1);
            let (c, d) = (ring_start(r + 1) + s, ring_start(r + 1) + s1);
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
    }
    let last = rings.len() - 1;
    for s in 0..segments {
        let s1 = (s + 1) % segments;
        faces.push([bottom, ring_start(last) + s1, ring_start(last) + s]);
    }
    let vertices = verts.iter().map(|v| v.map(T::lit)).collect();
    TriMesh::new(vertices, faces).expect("capsule is valid")
}

/// Flat `nx x ny` vertex grid in the z = 0 plane with a consistent diagonal.
pub fn grid<T: Real>(nx: usize, ny: usize, spacing: f64) -> TriMesh<T> {
    let mut verts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            verts.push(Vector3::new(T::lit(i as f64 * spacing), T::lit(j as f64 * spacing), T::zero()));
        }
    }
    let mut faces = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            faces.push([a, a + 1, a + nx + 1]);
            faces.push([a, a + nx + 1, a + nx]);
        }
    }
    TriMesh::new(verts, faces).expect("grid is valid")
}
