//! Bounding volume hierarchy for exact nearest-point queries on triangles and points.

use nalgebra::Vector3;

use crate::geometry::TriMesh;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T: Real> {
    pub min: Vector3<T>,
    pub max: Vector3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn from_points<'a>(mut points: impl Iterator<Item = &'a Vector3<T>>) -> Option<Self> {
        let first = *points.next()?;
        let mut b = Aabb { min: first, max: first };
        for p in points {
            b.grow(p);
        }
        Some(b)
    }

    pub fn grow(&mut self, p: &Vector3<T>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Self) -> Self {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn center(&self) -> Vector3<T> {
        (self.min + self.max) * T::lit(0.5)
    }

    pub fn extent(&self) -> Vector3<T> {
        self.max - self.min
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_squared(&self, p: &Vector3<T>) -> T {
        let mut d = T::zero();
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                T::zero()
            };
            d += v * v;
        }
        d
    }
}

fn closest_on_segment<T: Real>(p: &Vector3<T>, a: &Vector3<T>, b: &Vector3<T>) -> Vector3<T> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == T::zero() {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(T::zero(), T::one());
    a + ab * t
}

/// Closest point to `p` on triangle `(a, b, c)`, by Voronoi-region classification.
pub fn closest_point_on_triangle<T: Real>(
    p: &Vector3<T>,
    a: &Vector3<T>,
    b: &Vector3<T>,
    c: &Vector3<T>,
) -> Vector3<T> {
    let zero = T::zero();
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= zero && d2 <= zero {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= zero && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= zero && d1 >= zero && d3 <= zero {
        let denom = d1 - d3;
        if denom > zero {
            return a + ab * (d1 / denom);
        }
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= zero && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= zero && d2 >= zero && d6 <= zero {
        let denom = d2 - d6;
        if denom > zero {
            return a + ac * (d2 / denom);
        }
    }
    let va = d3 * d6 - d5 * d4;
    if va <= zero && (d4 - d3) >= zero && (d5 - d6) >= zero {
        let denom = (d4 - d3) + (d5 - d6);
        if denom > zero {
            return b + (c - b) * ((d4 - d3) / denom);
        }
    }
    let sum = va + vb + vc;
    if sum <= zero {
        // degenerate (collinear) triangle: best of the three edges
        let cands = [
            closest_on_segment(p, a, b),
            closest_on_segment(p, b, c),
            closest_on_segment(p, c, a),
        ];
        return cands
            .into_iter()
            .min_by(|x, y| (x - p).norm_squared().partial_cmp(&(y - p).norm_squared()).unwrap())
            .unwrap();
    }
    let denom = T::one() / sum;
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[derive(Debug, Clone)]
enum Node<T: Real> {
    Leaf { bounds: Aabb<T>, start: usize, end: usize },
    Inner { bounds: Aabb<T>, left: usize, right: usize },
}

impl<T: Real> Node<T> {
    fn bounds(&self) -> &Aabb<T> {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Median-split BVH over primitive bounding boxes. Primitive ids are `0..n`.
#[derive(Debug, Clone)]
pub struct Bvh<T: Real> {
    nodes: Vec<Node<T>>,
    order: Vec<usize>,
}

impl<T: Real> Bvh<T> {
    pub fn build(boxes: &[Aabb<T>]) -> Self {
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        let mut nodes = Vec::with_capacity(2 * boxes.len() / LEAF_SIZE + 1);
        if !boxes.is_empty() {
            let centers: Vec<Vector3<T>> = boxes.iter().map(Aabb::center).collect();
            Self::build_range(boxes, &centers, &mut order, 0, boxes.len(), &mut nodes);
        }
        Bvh { nodes, order }
    }

    fn build_range(
        boxes: &[Aabb<T>],
        centers: &[Vector3<T>],
        order: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<Node<T>>,
    ) -> usize {
        let bounds = order[start + 1..end]
            .iter()
            .fold(boxes[order[start]], |acc, &i| acc.merge(&boxes[i]));
        let idx = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { bounds, start, end });
            return idx;
        }
        let cb = Aabb::from_points(order[start..end].iter().map(|&i| &centers[i])).unwrap();
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centers[a][axis]
                .partial_cmp(&centers[b][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        nodes.push(Node::Leaf { bounds, start, end }); // placeholder
        let left = Self::build_range(boxes, centers, order, start, mid, nodes);
        let right = Self::build_range(boxes, centers, order, mid, end, nodes);
        nodes[idx] = Node::Inner { bounds, left, right };
        idx
    }

    /// Generic nearest search. `dist2(prim)` returns the squared distance to a primitive;
    /// ties resolve to the lowest primitive id.
    pub fn nearest_by<F>(&self, query: &Vector3<T>, mut dist2: F) -> Option<(usize, T)>
    where
        F: FnMut(usize) -> T,
    {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, T)> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if let Some((_, bd)) = best {
                if node.bounds().distance_squared(query) > bd {
                    continue;
                }
            }
            match node {
                Node::Leaf { start, end, .. } => {
                    for &prim in &self.order[*start..*end] {
                        let d = dist2(prim);
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d < bd || (d == bd && prim < bi),
                        };
                        if better {
                            best = Some((prim, d));
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_squared(query);
                    let dr = self.nodes[*right].bounds().distance_squared(query);
                    // visit the nearer child first
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }
}

/// Result of a nearest-point-on-surface query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestHit<T: Real> {
    pub point: Vector3<T>,
    pub face: usize,
    pub distance: T,
}

/// Triangle BVH over a mesh for repeated closest-point queries. Read-only after build.
#[derive(Debug, Clone)]
pub struct SurfaceIndex<T: Real> {
    triangles: Vec<[Vector3<T>; 3]>,
    bvh: Bvh<T>,
}

impl<T: Real> SurfaceIndex<T> {
    pub fn new(mesh: &TriMesh<T>) -> Self {
        let triangles: Vec<[Vector3<T>; 3]> = (0..mesh.num_faces()).map(|f| mesh.triangle(f)).collect();
        let boxes: Vec<Aabb<T>> = triangles
            .iter()
            .map(|t| Aabb::from_points(t.iter()).unwrap())
            .collect();
        SurfaceIndex { bvh: Bvh::build(&boxes), triangles }
    }

    pub fn nearest(&self, query: &Vector3<T>) -> Option<NearestHit<T>> {
        let tris = &self.triangles;
        let (face, d2) = self.bvh.nearest_by(query, |f| {
            let [a, b, c] = &tris[f];
            (closest_point_on_triangle(query, a, b, c) - query).norm_squared()
        })?;
        let [a, b, c] = &tris[face];
        let point = closest_point_on_triangle(query, a, b, c);
        Some(NearestHit { point, face, distance: d2.sqrt() })
    }

    pub fn num_faces(&self) -> usize {
        self.triangles.len()
    }
}

/// Exact closest point on a mesh. Builds an index per call; use [`SurfaceIndex`] for
/// repeated queries.
pub fn nearest_point_on_surface<T: Real>(mesh: &TriMesh<T>, query: &Vector3<T>) -> Option<NearestHit<T>> {
    SurfaceIndex::new(mesh).nearest(query)
}

/// Point BVH for exact nearest-neighbor lookups with lowest-index tie-breaking.
#[derive(Debug, Clone)]
pub struct PointIndex<T: Real> {
    points: Vec<Vector3<T>>,
    bvh: Bvh<T>,
}

impl<T: Real> PointIndex<T> {
    pub fn new(points: &[Vector3<T>]) -> Self {
        let boxes: Vec<Aabb<T>> = points.iter().map(|p| Aabb { min: *p, max: *p }).collect();
        PointIndex { bvh: Bvh::build(&boxes), points: points.to_vec() }
    }

    /// `(index, distance)` of the closest point.
    pub fn nearest(&self, query: &Vector3<T>) -> Option<(usize, T)> {
        let pts = &self.points;
        self.bvh
            .nearest_by(query, |i| (pts[i] - query).norm_squared())
            .map(|(i, d2)| (i, d2.sqrt()))
    }
}
