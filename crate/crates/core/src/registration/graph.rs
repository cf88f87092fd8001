use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::RegistrationError;
use crate::geometry::{TriMesh, VertexGraph};
use crate::Real;

/// Embedded deformation graph over a template mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DeformationGraph<T: Real> {
    pub node_vertex_ids: Vec<usize>,
    /// Node positions; template positions after `build_graph`.
    pub node_positions: Vec<Vector3<T>>,
    pub base_radii: Vec<T>,
    /// Per mesh vertex, `(node, weight)` pairs sorted by node, normalized to sum 1.
    pub vertex_weights: Vec<Vec<(usize, T)>>,
    /// Node pairs `(i, j)` with `i < j`, sorted.
    pub smooth_edges: Vec<(usize, usize)>,
    /// Vertices no node reached within its falloff; each is bound to its hop-nearest node.
    pub uncovered_vertices: Vec<usize>,
    pub k: usize,
    pub alpha: T,
}

impl<T: Real> DeformationGraph<T> {
    pub fn num_nodes(&self) -> usize {
        self.node_vertex_ids.len()
    }
}

/// Random-order greedy cover: each surviving candidate becomes a node and knocks out its
/// `k`-hop neighbourhood.
pub fn sample_nodes<T: Real>(graph: &VertexGraph<T>, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..graph.num_vertices()).collect();
    order.shuffle(&mut crate::rng::seeded(seed));
    let mut candidate = vec![true; graph.num_vertices()];
    let mut nodes = Vec::new();
    for v in order {
        if !candidate[v] {
            continue;
        }
        nodes.push(v);
        for u in graph.hop_neighborhood(v, k) {
            candidate[u] = false;
        }
    }
    nodes
}

/// Mean geodesic distance from `node` to the rest of its `k`-hop neighbourhood.
pub fn base_radius<T: Real>(graph: &VertexGraph<T>, node: usize, k: usize) -> Result<T, RegistrationError> {
    let mut ring = graph.hop_neighborhood(node, k);
    ring.remove(&node);
    if ring.is_empty() {
        return Err(RegistrationError::IsolatedVertex(node));
    }
    let dist = graph.geodesic_distances_to(node, &ring);
    let sum = ring.iter().fold(T::zero(), |acc, v| acc + dist[v]);
    Ok(sum / T::from_count(ring.len()))
}

/// `max(0, (1 - d² / (α r)²)³)`.
pub fn node_weight<T: Real>(d: T, r: T, alpha: T) -> T {
    let reach = alpha * r;
    let q = T::one() - (d * d) / (reach * reach);
    if q <= T::zero() {
        T::zero()
    } else {
        q * q * q
    }
}

/// Samples nodes on `template`, computes radii, normalized vertex weights and smooth edges.
pub fn build_graph<T: Real>(
    template: &TriMesh<T>,
    vgraph: &VertexGraph<T>,
    k: usize,
    alpha: T,
    seed: u64,
) -> Result<DeformationGraph<T>, RegistrationError> {
    if k == 0 || alpha <= T::zero() {
        return Err(RegistrationError::InvalidConfig(format!("k = {k}, alpha = {alpha}")));
    }
    let n = template.num_vertices();
    let nodes = sample_nodes(vgraph, k, seed);
    let radii = nodes
        .iter()
        .map(|&v| base_radius(vgraph, v, k))
        .collect::<Result<Vec<T>, _>>()?;

    let mut raw: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
    for (ni, (&v, &r)) in nodes.iter().zip(&radii).enumerate() {
        for (u, d) in vgraph.geodesic_distances(v, Some(alpha * r)) {
            let w = node_weight(d, r, alpha);
            if w > T::zero() {
                raw[u].push((ni, w));
            }
        }
    }

    let mut uncovered = Vec::new();
    let node_of: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    for (v, row) in raw.iter_mut().enumerate() {
        if row.is_empty() {
            uncovered.push(v);
            let hops = vgraph.hop_distances(v, usize::MAX);
            let nearest = hops
                .iter()
                .filter_map(|(u, &h)| node_of.get(u).map(|&ni| (h, ni)))
                .min()
                .map(|(_, ni)| ni)
                .expect("every vertex is within k hops of a node");
            row.push((nearest, T::one()));
            continue;
        }
        let sum = row.iter().fold(T::zero(), |acc, &(_, w)| acc + w);
        for (_, w) in row.iter_mut() {
            *w /= sum;
        }
    }

    let r_max = radii.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let mut smooth_edges = BTreeSet::new();
    for (i, &v) in nodes.iter().enumerate() {
        for (u, d) in vgraph.geodesic_distances(v, Some(r_max + r_max)) {
            if let Some(&j) = node_of.get(&u) {
                let limit = radii[i].max(radii[j]);
                if j != i && d < limit + limit {
                    smooth_edges.insert((i.min(j), i.max(j)));
                }
            }
        }
    }

    Ok(DeformationGraph {
        node_positions: nodes.iter().map(|&v| template.vertices[v]).collect(),
        node_vertex_ids: nodes,
        base_radii: radii,
        vertex_weights: raw,
        smooth_edges: smooth_edges.into_iter().collect(),
        uncovered_vertices: uncovered,
        k,
        alpha,
    })
}
