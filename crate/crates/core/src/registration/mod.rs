//! Two-stage non-rigid fit of a posed body model to a scan: an embedded deformation graph
//! warp followed by Laplacian-regularized per-vertex shifts.

mod graph;
mod matching;
mod stage1;
mod stage2;

pub use graph::{base_radius, build_graph, node_weight, sample_nodes, DeformationGraph};
pub use stage1::{solve_stage1, NodeTransform, Stage1Report};
pub use stage2::{
    shift_residual, shift_system, solve_shifts, solve_stage2, stage2_targets, umbrella_laplacian, Stage2Report,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{lbs_forward, recover_displacement, BodyParams, ModelError, ParametricModel};
use crate::geometry::{build_vertex_graph, TriMesh};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("vertex {0} has no neighbours within k hops")]
    IsolatedVertex(usize),
    #[error("energy kept increasing after damped retries (iteration {iteration}, energy {energy:e})")]
    Diverged { iteration: usize, energy: f64 },
    #[error("every correspondence was pruned")]
    NoCorrespondences,
    #[error("singular shift system: {0}")]
    SingularSystem(String),
    #[error("deformation graph covers {graph_vertices} vertices but the mesh has {mesh_vertices}")]
    GraphMismatch { graph_vertices: usize, mesh_vertices: usize },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub max_gauss_newton_iters: usize,
    pub data_weight: f64,
    pub rigidity_weight: f64,
    pub smooth_weight: f64,
    /// Metres.
    pub correspondence_max_dist: f64,
    /// Degrees.
    pub normal_angle_max: f64,
    pub point_to_plane: bool,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            max_gauss_newton_iters: 20,
            data_weight: 1.0,
            rigidity_weight: 10.0,
            smooth_weight: 1.0,
            correspondence_max_dist: 0.05,
            normal_angle_max: 60.0,
            point_to_plane: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub laplacian_weight: f64,
    pub correspondence_max_dist: f64,
    pub normal_angle_max: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self { laplacian_weight: 1.0, correspondence_max_dist: 0.05, normal_angle_max: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub k: usize,
    pub alpha: f64,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { k: 2, alpha: 1.5, stage1: Stage1Config::default(), stage2: Stage2Config::default(), seed: 0 }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let s1 = &self.stage1;
        let s2 = &self.stage2;
        let checks = [
            (self.k >= 1, "k must be at least 1"),
            (self.alpha > 0.0, "alpha must be positive"),
            (s1.data_weight >= 0.0 && s1.rigidity_weight >= 0.0 && s1.smooth_weight >= 0.0, "weights must be non-negative"),
            (s2.laplacian_weight >= 0.0, "laplacian weight must be non-negative"),
            (s1.correspondence_max_dist > 0.0 && s2.correspondence_max_dist > 0.0, "correspondence distance must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(RegistrationError::InvalidConfig((*msg).into())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stages {
    One,
    Two,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub stage1: Option<Stage1Report>,
    pub stage2: Option<Stage2Report>,
    pub uncovered_vertices: usize,
}

#[derive(Debug, Clone)]
pub struct FitOutput<T: Real> {
    pub posed: TriMesh<T>,
    pub stage1: Option<TriMesh<T>>,
    pub fitted: TriMesh<T>,
    /// T-pose displacement reproducing `fitted` under the given parameters.
    pub displacement: Vec<Vector3<T>>,
    pub graph: Option<DeformationGraph<T>>,
    pub transforms: Vec<NodeTransform<T>>,
    pub report: FitReport,
}

/// Poses the model, warps it with the embedded graph, then solves per-vertex shifts.
pub fn fit<T: Real>(
    model: &ParametricModel<T>,
    params: &BodyParams<T>,
    scan: &TriMesh<T>,
    config: &FitConfig,
    stages: Stages,
) -> Result<FitOutput<T>, RegistrationError> {
    config.validate()?;
    let bare = params.without_displacement();
    bare.check(model)?;
    let posed = model.mesh_with(lbs_forward(model, &bare)?.vertices);

    let mut graph = None;
    let mut transforms = Vec::new();
    let mut report = FitReport { stage1: None, stage2: None, uncovered_vertices: 0 };
    let mut current = posed.clone();
    let mut stage1_mesh = None;
    if stages != Stages::Two {
        let template = model.template_mesh().map_err(ModelError::from)?;
        let vgraph = build_vertex_graph(&template);
        let g = build_graph(&template, &vgraph, config.k, T::lit(config.alpha), config.seed)?;
        let (warped, xf, r1) = solve_stage1(&posed, &g, scan, &config.stage1)?;
        report.uncovered_vertices = g.uncovered_vertices.len();
        report.stage1 = Some(r1);
        transforms = xf;
        graph = Some(g);
        current = warped.clone();
        stage1_mesh = Some(warped);
    }
    if stages != Stages::One {
        let (fitted, r2) = solve_stage2(&current, scan, &config.stage2)?;
        report.stage2 = Some(r2);
        current = fitted;
    }
    let displacement = recover_displacement(model, &current.vertices, &bare)?;
    Ok(FitOutput { posed, stage1: stage1_mesh, fitted: current, displacement, graph, transforms, report })
}
