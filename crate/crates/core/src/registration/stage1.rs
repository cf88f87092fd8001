//! Embedded-deformation warp solved by damped Gauss-Newton over free 3x3 node matrices.

use std::collections::HashMap;

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::matching::{Match, ScanTarget};
use super::{DeformationGraph, RegistrationError, Stage1Config};
use crate::geometry::TriMesh;
use crate::sparse::{pcg, BlockJacobi, CsrMatrix};
use crate::Real;

const NODE_DOF: usize = 12;
const MAX_RETRIES: usize = 3;
/// Relative energy decrease below which the warp counts as converged.
const REL_DECREASE_TOL: f64 = 1e-7;
/// Predicted relative decrease below which a failed retry sequence means "stationary".
const STATIONARY_TOL: f64 = 1e-6;

/// Node transform: `x -> R (x - g) + g + t`. `R` is a free 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NodeTransform<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> NodeTransform<T> {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// `‖RᵀR − I‖_F`.
    pub fn rigidity_residual(&self) -> T {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub nodes: usize,
    pub smooth_edges: usize,
    pub iterations: usize,
    /// Energy at the start and after every accepted step.
    pub energy_trace: Vec<f64>,
    /// Matched vertices at the start and after every accepted step.
    pub matched_trace: Vec<usize>,
    pub rejected_steps: usize,
    pub converged: bool,
    /// Largest `‖RᵀR − I‖_F` over nodes at exit.
    pub max_rigidity_residual: f64,
}

struct Problem<'a, T: Real> {
    rest: &'a [Vector3<T>],
    template: &'a TriMesh<T>,
    graph: &'a DeformationGraph<T>,
    nodes: Vec<Vector3<T>>,
    scan: ScanTarget<T>,
    cfg: &'a Stage1Config,
}

struct Evaluation<T: Real> {
    energy: T,
    warped: Vec<Vector3<T>>,
    matches: Vec<Option<Match<T>>>,
}

impl<T: Real> Problem<'_, T> {
    fn warp(&self, xf: &[NodeTransform<T>]) -> Vec<Vector3<T>> {
        self.rest
            .iter()
            .zip(&self.graph.vertex_weights)
            .map(|(v, row)| {
                row.iter().fold(Vector3::zeros(), |acc, &(i, w)| {
                    let g = self.nodes[i];
                    acc + (xf[i].rotation * (v - g) + g + xf[i].translation) * w
                })
            })
            .collect()
    }

    fn max_dist(&self) -> T {
        T::lit(self.cfg.correspondence_max_dist)
    }

    fn evaluate(&self, xf: &[NodeTransform<T>]) -> Evaluation<T> {
        let warped = self.warp(xf);
        let normals = self.template.with_vertices(warped.clone()).vertex_normals();
        let matches = self.scan.matches(&warped, &normals, self.max_dist(), T::lit(self.cfg.normal_angle_max));
        let md2 = self.max_dist() * self.max_dist();
        let data = warped.iter().zip(&matches).fold(T::zero(), |acc, (p, m)| {
            acc + match m {
                Some(m) if self.cfg.point_to_plane => {
                    let r = m.normal.dot(&(p - m.point));
                    r * r
                }
                Some(m) => (p - m.point).norm_squared(),
                None => md2,
            }
        });
        let rigidity = xf.iter().fold(T::zero(), |acc, x| {
            acc + (x.rotation.transpose() * x.rotation - Matrix3::identity()).norm_squared()
        });
        let smooth = self.graph.smooth_edges.iter().fold(T::zero(), |acc, &(i, j)| {
            acc + self.smooth_residual(xf, i, j).norm_squared() + self.smooth_residual(xf, j, i).norm_squared()
        });
        let energy = T::lit(self.cfg.data_weight) * data
            + T::lit(self.cfg.rigidity_weight) * rigidity
            + T::lit(self.cfg.smooth_weight) * smooth;
        Evaluation { energy, warped, matches }
    }

    /// Where node `i` sends node `j`, minus where `j` sends itself.
    fn smooth_residual(&self, xf: &[NodeTransform<T>], i: usize, j: usize) -> Vector3<T> {
        let (gi, gj) = (self.nodes[i], self.nodes[j]);
        xf[i].rotation * (gj - gi) + gi + xf[i].translation - (gj + xf[j].translation)
    }
}

/// Symmetric block-sparse `JᵀJ` and `Jᵀr` with 12x12 node blocks.
struct NormalEquations<T: Real> {
    blocks: HashMap<(usize, usize), SMatrix<T, NODE_DOF, NODE_DOF>>,
    gradient: Vec<T>,
}

impl<T: Real> NormalEquations<T> {
    fn new(nodes: usize) -> Self {
        Self { blocks: HashMap::new(), gradient: vec![T::zero(); nodes * NODE_DOF] }
    }

    /// Adds one residual row given as `(node, local dof, ∂r/∂x)` entries grouped by node.
    fn add_row(&mut self, entries: &[(usize, usize, T)], residual: T) {
        for &(n, d, v) in entries {
            self.gradient[n * NODE_DOF + d] += v * residual;
        }
        for &(ni, di, vi) in entries {
            for &(nj, dj, vj) in entries {
                let block = self.blocks.entry((ni, nj)).or_insert_with(SMatrix::zeros);
                block[(di, dj)] += vi * vj;
            }
        }
    }

    fn to_csr(&self, nodes: usize, damping: T) -> CsrMatrix<T> {
        let dim = nodes * NODE_DOF;
        let mut max_diag = T::zero();
        for i in 0..nodes {
            if let Some(b) = self.blocks.get(&(i, i)) {
                for d in 0..NODE_DOF {
                    max_diag = max_diag.max(b[(d, d)]);
                }
            }
        }
        let floor = max_diag * T::lit(1e-9) + T::TINY;
        let mut triplets = Vec::with_capacity(self.blocks.len() * NODE_DOF * NODE_DOF + dim);
        for (&(bi, bj), block) in &self.blocks {
            for r in 0..NODE_DOF {
                for c in 0..NODE_DOF {
                    let v = block[(r, c)];
                    if v != T::zero() {
                        triplets.push((bi * NODE_DOF + r, bj * NODE_DOF + c, v));
                    }
                }
            }
        }
        // Marquardt damping on the diagonal, floored so unconstrained dofs stay solvable
        for i in 0..nodes {
            let diag = self.blocks.get(&(i, i));
            for d in 0..NODE_DOF {
                let a = diag.map_or(T::zero(), |b| b[(d, d)]);
                triplets.push((i * NODE_DOF + d, i * NODE_DOF + d, damping * a.max(floor)));
            }
        }
        CsrMatrix::from_triplets(dim, dim, triplets)
    }
}

fn linearize<T: Real>(p: &Problem<'_, T>, xf: &[NodeTransform<T>], matches: &[Option<Match<T>>]) -> NormalEquations<T> {
    let cfg = p.cfg;
    let mut ne = NormalEquations::new(xf.len());
    let mut entries: Vec<(usize, usize, T)> = Vec::new();

    let sd = T::lit(cfg.data_weight).sqrt();
    for ((v, row), m) in p.rest.iter().zip(&p.graph.vertex_weights).zip(matches) {
        let Some(m) = m else { continue };
        let warped = row.iter().fold(Vector3::zeros(), |acc, &(i, w)| {
            let g = p.nodes[i];
            acc + (xf[i].rotation * (v - g) + g + xf[i].translation) * w
        });
        let diff = warped - m.point;
        if cfg.point_to_plane {
            entries.clear();
            let n = m.normal;
            for &(i, w) in row {
                let rel = (v - p.nodes[i]) * w;
                for a in 0..3 {
                    for b in 0..3 {
                        entries.push((i, 3 * a + b, sd * n[a] * rel[b]));
                    }
                    entries.push((i, 9 + a, sd * n[a] * w));
                }
            }
            ne.add_row(&entries, sd * n.dot(&diff));
        } else {
            for a in 0..3 {
                entries.clear();
                for &(i, w) in row {
                    let rel = (v - p.nodes[i]) * w;
                    for b in 0..3 {
                        entries.push((i, 3 * a + b, sd * rel[b]));
                    }
                    entries.push((i, 9 + a, sd * w));
                }
                ne.add_row(&entries, sd * diff[a]);
            }
        }
    }

    let sr = T::lit(cfg.rigidity_weight).sqrt();
    for (i, x) in xf.iter().enumerate() {
        let r = x.rotation;
        let rtr = r.transpose() * r - Matrix3::identity();
        for a in 0..3 {
            for b in 0..3 {
                entries.clear();
                for c in 0..3 {
                    // ∂(RᵀR)_ab / ∂R_ca = R_cb and / ∂R_cb = R_ca
                    entries.push((i, 3 * c + a, sr * r[(c, b)]));
                    entries.push((i, 3 * c + b, sr * r[(c, a)]));
                }
                ne.add_row(&entries, sr * rtr[(a, b)]);
            }
        }
    }

    let ss = T::lit(cfg.smooth_weight).sqrt();
    for &(i, j) in &p.graph.smooth_edges {
        for (s, t) in [(i, j), (j, i)] {
            let res = p.smooth_residual(xf, s, t);
            let d = p.nodes[t] - p.nodes[s];
            for a in 0..3 {
                entries.clear();
                for b in 0..3 {
                    entries.push((s, 3 * a + b, ss * d[b]));
                }
                entries.push((s, 9 + a, ss));
                entries.push((t, 9 + a, -ss));
                ne.add_row(&entries, ss * res[a]);
            }
        }
    }
    ne
}

fn apply_step<T: Real>(xf: &[NodeTransform<T>], delta: &[T]) -> Vec<NodeTransform<T>> {
    xf.iter()
        .enumerate()
        .map(|(i, x)| {
            let d = &delta[i * NODE_DOF..(i + 1) * NODE_DOF];
            let mut out = *x;
            for a in 0..3 {
                for b in 0..3 {
                    out.rotation[(a, b)] += d[3 * a + b];
                }
                out.translation[a] += d[9 + a];
            }
            out
        })
        .collect()
}

/// Warps `posed` toward `scan`. Node positions are read from `posed` at the graph's node
/// vertices; the graph's weights and edges come from the T-pose template.
///
/// Pruned vertices contribute the constant `data_weight * max_dist²`, so the energy is a
/// function of the warp alone and every accepted step lowers it.
pub fn solve_stage1<T: Real>(
    posed: &TriMesh<T>,
    graph: &DeformationGraph<T>,
    scan: &TriMesh<T>,
    cfg: &Stage1Config,
) -> Result<(TriMesh<T>, Vec<NodeTransform<T>>, Stage1Report), RegistrationError> {
    if graph.vertex_weights.len() != posed.num_vertices() {
        return Err(RegistrationError::GraphMismatch {
            graph_vertices: graph.vertex_weights.len(),
            mesh_vertices: posed.num_vertices(),
        });
    }
    let problem = Problem {
        rest: &posed.vertices,
        template: posed,
        graph,
        nodes: graph.node_vertex_ids.iter().map(|&v| posed.vertices[v]).collect(),
        scan: ScanTarget::new(scan),
        cfg,
    };
    let n_nodes = graph.num_nodes();
    let mut xf = vec![NodeTransform::identity(); n_nodes];
    let mut current = problem.evaluate(&xf);
    let count = |m: &[Option<Match<T>>]| m.iter().filter(|m| m.is_some()).count();
    if count(&current.matches) == 0 {
        return Err(RegistrationError::NoCorrespondences);
    }
    let mut report = Stage1Report {
        nodes: n_nodes,
        smooth_edges: graph.smooth_edges.len(),
        iterations: 0,
        energy_trace: vec![current.energy.as_f64()],
        matched_trace: vec![count(&current.matches)],
        rejected_steps: 0,
        converged: false,
        max_rigidity_residual: 0.0,
    };

    let mut damping = T::lit(1e-4);
    let mut x = vec![T::zero(); n_nodes * NODE_DOF];
    for _ in 0..cfg.max_gauss_newton_iters {
        if current.energy <= T::TINY * T::TINY {
            report.converged = true;
            break;
        }
        let ne = linearize(&problem, &xf, &current.matches);
        let rhs: Vec<T> = ne.gradient.iter().map(|&g| -g).collect();
        let mut accepted = None;
        let mut predicted = T::zero();
        for _ in 0..=MAX_RETRIES {
            let a = ne.to_csr(n_nodes, damping);
            x.iter_mut().for_each(|v| *v = T::zero());
            let precond = BlockJacobi::new(&a, NODE_DOF);
            pcg(&a, &rhs, &mut x, &precond, T::tol(1e-10), 10 * n_nodes * NODE_DOF);
            // predicted decrease of the undamped model: -(gᵀδ + ½ δᵀ JᵀJ δ)
            let undamped = ne.to_csr(n_nodes, T::zero());
            let mut jtj_x = vec![T::zero(); x.len()];
            undamped.mul_vec(&x, &mut jtj_x);
            let g_dot = ne.gradient.iter().zip(&x).fold(T::zero(), |s, (&g, &d)| s + g * d);
            let quad = jtj_x.iter().zip(&x).fold(T::zero(), |s, (&q, &d)| s + q * d);
            predicted = -(g_dot + g_dot + quad);
            let trial_xf = apply_step(&xf, &x);
            let trial = problem.evaluate(&trial_xf);
            if trial.energy < current.energy {
                accepted = Some((trial_xf, trial));
                damping = (damping / T::lit(3.0)).max(T::lit(1e-9));
                break;
            }
            report.rejected_steps += 1;
            damping *= T::lit(100.0);
        }
        match accepted {
            Some((next_xf, next)) => {
                let decrease = (current.energy - next.energy) / current.energy;
                xf = next_xf;
                current = next;
                report.iterations += 1;
                report.energy_trace.push(current.energy.as_f64());
                report.matched_trace.push(count(&current.matches));
                if decrease < T::lit(REL_DECREASE_TOL) {
                    report.converged = true;
                    break;
                }
            }
            None if predicted <= T::lit(STATIONARY_TOL) * current.energy => {
                report.converged = true;
                break;
            }
            None => {
                return Err(RegistrationError::Diverged { iteration: report.iterations, energy: current.energy.as_f64() })
            }
        }
    }
    report.max_rigidity_residual = xf.iter().map(|x| x.rigidity_residual().as_f64()).fold(0.0, f64::max);
    Ok((posed.with_vertices(current.warped), xf, report))
}
