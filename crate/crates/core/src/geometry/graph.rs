use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use crate::geometry::TriMesh;
use crate::Real;

/// Undirected edge graph of a mesh with Euclidean edge lengths.
///
/// Neighbor lists are sorted by vertex index so every traversal is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexGraph<T: Real> {
    adjacency: Vec<Vec<usize>>,
    lengths: Vec<Vec<T>>,
}

pub fn build_vertex_graph<T: Real>(mesh: &TriMesh<T>) -> VertexGraph<T> {
    let n = mesh.num_vertices();
    let mut adjacency = vec![Vec::new(); n];
    for (i, j) in mesh.edges() {
        adjacency[i].push(j);
        adjacency[j].push(i);
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    let lengths = adjacency
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            nbrs.iter()
                .map(|&j| (mesh.vertices[i] - mesh.vertices[j]).norm())
                .collect()
        })
        .collect();
    VertexGraph { adjacency, lengths }
}

#[derive(Clone, Copy)]
struct Frontier<T> {
    dist: T,
    vertex: usize,
}

impl<T: PartialOrd> PartialEq for Frontier<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: PartialOrd> Eq for Frontier<T> {}
impl<T: PartialOrd> PartialOrd for Frontier<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: PartialOrd> Ord for Frontier<T> {
    // Min-heap on distance, ties on lower vertex index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl<T: Real> VertexGraph<T> {
    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    /// Neighbors of `v` paired with edge lengths.
    pub fn edges_of(&self, v: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        self.adjacency[v].iter().copied().zip(self.lengths[v].iter().copied())
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edge_length(&self, i: usize, j: usize) -> Option<T> {
        self.adjacency[i]
            .binary_search(&j)
            .ok()
            .map(|pos| self.lengths[i][pos])
    }

    /// Shortest-path distances along mesh edges from `source`.
    ///
    /// Vertices farther than `cutoff` are omitted.
    pub fn geodesic_distances(&self, source: usize, cutoff: Option<T>) -> BTreeMap<usize, T> {
        self.dijkstra(source, cutoff, None)
    }

    /// Dijkstra that stops once every vertex in `targets` has been settled.
    pub fn geodesic_distances_to(&self, source: usize, targets: &BTreeSet<usize>) -> BTreeMap<usize, T> {
        let all = self.dijkstra(source, None, Some(targets));
        targets
            .iter()
            .filter_map(|t| all.get(t).map(|&d| (*t, d)))
            .collect()
    }

    fn dijkstra(
        &self,
        source: usize,
        cutoff: Option<T>,
        targets: Option<&BTreeSet<usize>>,
    ) -> BTreeMap<usize, T> {
        let mut settled = BTreeMap::new();
        let mut best: BTreeMap<usize, T> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        let mut remaining = targets.map(|t| t.len());
        best.insert(source, T::zero());
        heap.push(Frontier { dist: T::zero(), vertex: source });
        while let Some(Frontier { dist, vertex }) = heap.pop() {
            if settled.contains_key(&vertex) {
                continue;
            }
            settled.insert(vertex, dist);
            if let (Some(t), Some(rem)) = (targets, remaining.as_mut()) {
                if t.contains(&vertex) {
                    *rem -= 1;
                    if *rem == 0 {
                        break;
                    }
                }
            }
            for (nbr, len) in self.edges_of(vertex) {
                if settled.contains_key(&nbr) {
                    continue;
                }
                let nd = dist + len;
                if cutoff.is_some_and(|c| nd > c) {
                    continue;
                }
                if best.get(&nbr).is_none_or(|&b| nd < b) {
                    best.insert(nbr, nd);
                    heap.push(Frontier { dist: nd, vertex: nbr });
                }
            }
        }
        settled
    }

    /// Hop counts from `source` for every vertex reachable within `max_hops`.
    pub fn hop_distances(&self, source: usize, max_hops: usize) -> BTreeMap<usize, usize> {
        let mut hops = BTreeMap::new();
        let mut queue = VecDeque::new();
        hops.insert(source, 0);
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let h = hops[&v];
            if h == max_hops {
                continue;
            }
            for &n in &self.adjacency[v] {
                if let std::collections::btree_map::Entry::Vacant(e) = hops.entry(n) {
                    e.insert(h + 1);
                    queue.push_back(n);
                }
            }
        }
        hops
    }

    /// All vertices reachable from `source` within `k` edge hops, including `source`.
    pub fn hop_neighborhood(&self, source: usize, k: usize) -> BTreeSet<usize> {
        self.hop_distances(source, k).into_keys().collect()
    }
}
