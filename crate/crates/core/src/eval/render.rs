//! Unlit z-buffer rasterizer. Pixel centres sit at integer coordinates; coverage follows the
//! top-left rule so shared edges are drawn exactly once.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::{EvalError, Image, Mask};
use crate::geometry::TriMesh;
use crate::triangulation::Camera;
use crate::Real;

const NEAR: f64 = 1e-6;

#[derive(Clone, Copy)]
struct ClipVertex {
    cam: Vector3<f64>,
    uv: Vector2<f64>,
}

struct ScreenTri {
    p: [Vector2<f64>; 3],
    inv_z: [f64; 3],
    uv_over_z: [Vector2<f64>; 3],
    area: f64,
}

/// Sutherland-Hodgman against `z >= NEAR`.
fn clip_near(poly: [ClipVertex; 3]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = poly[i];
        let b = poly[(i + 1) % 3];
        let (ina, inb) = (a.cam.z >= NEAR, b.cam.z >= NEAR);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR - a.cam.z) / (b.cam.z - a.cam.z);
            out.push(ClipVertex { cam: a.cam + (b.cam - a.cam) * t, uv: a.uv + (b.uv - a.uv) * t });
        }
    }
    out
}

/// Edge function of `p` against the directed edge `a → b`, evaluated with the endpoints in a
/// canonical order so that the reversed edge yields the exact negation.
#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    let swap = (b.x, b.y) < (a.x, a.y);
    let (a, b) = if swap { (b, a) } else { (a, b) };
    let e = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if swap {
        -e
    } else {
        e
    }
}

/// Top-left rule in y-down image coordinates for a positively oriented triangle.
#[inline]
fn owns_edge(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn bilinear<T: Real>(tex: &Image<T>, uv: &Vector2<f64>) -> [T; 3] {
    let (w, h) = (tex.width as f64, tex.height as f64);
    let x = (uv.x * w - 0.5).clamp(0.0, w - 1.0);
    let y = ((1.0 - uv.y) * h - 0.5).clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(tex.width - 1), (y0 + 1).min(tex.height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (c00, c10, c01, c11) = (tex.get(x0, y0), tex.get(x1, y0), tex.get(x0, y1), tex.get(x1, y1));
    let mut out = [T::zero(); 3];
    for c in 0..3 {
        let top = c00[c].as_f64() * (1.0 - fx) + c10[c].as_f64() * fx;
        let bottom = c01[c].as_f64() * (1.0 - fx) + c11[c].as_f64() * fx;
        out[c] = T::lit((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
    }
    out
}

fn screen_triangles<T: Real>(mesh: &TriMesh<T>, camera: &Camera<T>) -> Result<Vec<ScreenTri>, EvalError> {
    let (Some(uvs), Some(uv_faces)) = (&mesh.uv_coords, &mesh.uv_faces) else {
        return Err(EvalError::MissingUVs);
    };
    if uv_faces.len() != mesh.num_faces() {
        return Err(EvalError::DimensionMismatch(format!(
            "{} uv faces for {} faces",
            uv_faces.len(),
            mesh.num_faces()
        )));
    }
    let k = camera.k.map(|v| v.as_f64());
    let cam: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| camera.to_camera(v).map(|c| c.as_f64())).collect();
    let mut tris = Vec::with_capacity(mesh.num_faces());
    for (face, uv_face) in mesh.faces.iter().zip(uv_faces) {
        let corner = |i: usize| ClipVertex { cam: cam[face[i]], uv: uvs[uv_face[i]].map(|c| c.as_f64()) };
        let poly = clip_near([corner(0), corner(1), corner(2)]);
        if poly.len() < 3 {
            continue;
        }
        let proj: Vec<(Vector2<f64>, f64, Vector2<f64>)> = poly
            .iter()
            .map(|v| {
                let h = k * v.cam;
                let inv_z = 1.0 / v.cam.z;
                (Vector2::new(h.x * inv_z, h.y * inv_z), inv_z, v.uv * inv_z)
            })
            .collect();
        for i in 1..proj.len() - 1 {
            let mut idx = [0, i, i + 1];
            let area = edge(&proj[idx[0]].0, &proj[idx[1]].0, &proj[idx[2]].0);
            if area == 0.0 || !area.is_finite() {
                continue;
            }
            if area < 0.0 {
                idx.swap(1, 2);
            }
            tris.push(ScreenTri {
                p: idx.map(|j| proj[j].0),
                inv_z: idx.map(|j| proj[j].1),
                uv_over_z: idx.map(|j| proj[j].2),
                area: area.abs(),
            });
        }
    }
    Ok(tris)
}

/// Renders `mesh` with `texture` through `camera` at the camera resolution. Uncovered pixels are
/// black and unset in the mask.
pub fn render<T: Real>(mesh: &TriMesh<T>, texture: &Image<T>, camera: &Camera<T>) -> Result<(Image<T>, Mask), EvalError> {
    texture.validate()?;
    camera.validate().map_err(|e| EvalError::InvalidCamera(e.to_string()))?;
    let (width, height) = (camera.width, camera.height);
    if width == 0 || height == 0 {
        return Err(EvalError::EmptyImage);
    }
    let tris = screen_triangles(mesh, camera)?;

    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); height];
    for (t, tri) in tris.iter().enumerate() {
        let ymin = tri.p.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let ymax = tri.p.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).floor().min(height as f64 - 1.0);
        if ymin > ymax {
            continue;
        }
        for row in &mut bins[ymin as usize..=ymax as usize] {
            row.push(t);
        }
    }

    let rows: Vec<(Vec<[T; 3]>, Vec<bool>)> = bins
        .par_iter()
        .enumerate()
        .map(|(y, bin)| {
            let mut depth = vec![f64::INFINITY; width];
            let mut color = vec![[T::zero(); 3]; width];
            let mut covered = vec![false; width];
            for &t in bin {
                let tri = &tris[t];
                let xmin = tri.p.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
                let xmax = tri.p.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).floor().min(width as f64 - 1.0);
                if xmin > xmax {
                    continue;
                }
                let [a, b, c] = &tri.p;
                let owns = [owns_edge(b, c), owns_edge(c, a), owns_edge(a, b)];
                for x in xmin as usize..=xmax as usize {
                    let p = Vector2::new(x as f64, y as f64);
                    let w = [edge(b, c, &p), edge(c, a, &p), edge(a, b, &p)];
                    if (0..3).any(|i| w[i] < 0.0 || (w[i] == 0.0 && !owns[i])) {
                        continue;
                    }
                    let bary = w.map(|wi| wi / tri.area);
                    let inv_z: f64 = (0..3).map(|i| bary[i] * tri.inv_z[i]).sum();
                    let z = 1.0 / inv_z;
                    if !(z < depth[x]) {
                        continue;
                    }
                    let uv = (0..3).fold(Vector2::zeros(), |acc, i| acc + tri.uv_over_z[i] * bary[i]) * z;
                    depth[x] = z;
                    covered[x] = true;
                    color[x] = bilinear(texture, &uv);
                }
            }
            (color, covered)
        })
        .collect();

    let mut image = Image::filled(width, height, [T::zero(); 3]);
    let mut mask = Mask::new(width, height);
    for (y, (color, covered)) in rows.into_iter().enumerate() {
        for x in 0..width {
            if covered[x] {
                image.set(x, y, color[x]);
                mask.values[y * width + x] = true;
            }
        }
    }
    Ok((image, mask))
}
