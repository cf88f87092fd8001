//! Command-line front end. [`run`] parses arguments, runs one subcommand on a thread pool
//! sized by `--jobs` or `AVATARFIT_THREADS`, and maps failures to exit codes: 1 for usage
//! errors, 2 for data errors (reported as a JSON object on stderr).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::body::{lbs_forward, BodyParams, ModelError};
use crate::eval::{chamfer_distance, render, EvalError, MetricReport, DEFAULT_SAMPLES};
use crate::geometry::{build_vertex_graph, GeometryError};
use crate::io::{self, Dtype, IoError, ParamsFile};
use crate::registration::{build_graph, fit, FitConfig, FitReport, RegistrationError, Stages};
use crate::synth::{self, SynthError, SynthKind, SynthPreset};
use crate::transfer::{apply_transfer, TransferError, TransferSpec};
use crate::triangulation::{triangulate_sequence, Keypoints2D, RansacParams, TriangulationError};

pub const THREADS_ENV: &str = "AVATARFIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "avatarfit", version, about = "Body-model skinning, scan registration, triangulation and metrics")]
pub struct Cli {
    /// Worker threads (overrides AVATARFIT_THREADS).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive a reduced model by deleting, hole-filling and flattening, then transferring coefficients.
    Transfer {
        #[arg(long)]
        model: PathBuf,
        /// One spec object, an array of specs, or {"rounds": [...]}.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        dtype: DtypeArg,
    },
    /// Pose a model with one frame of a parameter file.
    Pose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register the posed model to a scan.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        /// Writes the recovered T-pose displacement as JSON.
        #[arg(long)]
        displacement: Option<PathBuf>,
    },
    /// Robust multi-view triangulation of 2D keypoints.
    Triangulate {
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        tau: f64,
        #[arg(long, default_value_t = 0.3)]
        confidence: f64,
        #[arg(long = "sample-views", default_value_t = 2)]
        sample_views: usize,
        #[arg(long, default_value_t = 0.99)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampled chamfer distance between two meshes.
    EvalCd {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR and SSIM between two images.
    EvalImg {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unlit textured render of a mesh from one calibrated camera.
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        texture: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long = "camera-id")]
        camera_id: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Write a complete synthetic scenario.
    Synth {
        /// capsule_biped, cylinder_chain, sphere, or a preset JSON file.
        #[arg(long)]
        preset: String,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: DtypeArg,
    },
    /// Dump the embedded deformation graph of a model's template.
    Graph {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A data error: machine-readable kind plus message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub kind: String,
    pub message: String,
}

impl Failure {
    fn new(kind: &str, message: impl ToString) -> Self {
        Self { kind: kind.into(), message: message.to_string() }
    }
}

macro_rules! failure_from {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Failure::new($kind, e)
            }
        })*
    };
}

failure_from! {
    ModelError => "model",
    GeometryError => "geometry",
    TransferError => "transfer",
    RegistrationError => "registration",
    TriangulationError => "triangulation",
    EvalError => "eval",
    SynthError => "synth",
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::new(e.kind(), e)
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match cli.jobs {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse() {
                Ok(n) => Some(n),
                Err(_) => {
                    eprintln!("error: {THREADS_ENV} must be a non-negative integer, got {v:?}");
                    return 1;
                }
            },
            Err(_) => None,
        },
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| execute(cli.command)),
        Err(e) => Err(Failure::new("threads", e)),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{}", json!({ "error": f }));
            2
        }
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CmdResult {
    match out {
        Some(p) => io::write_json(p, value)?,
        None => print!("{}", io::to_json_string(value)),
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Rounds { rounds: Vec<TransferSpec> },
    List(Vec<TransferSpec>),
    One(TransferSpec),
}

/// Ground-truth displacement file written by `synth` and `fit --displacement`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementFile {
    pub displacement: Vec<Vector3<f64>>,
}

#[derive(Serialize)]
struct FitOutputReport<'a> {
    stage: &'a str,
    vertices: usize,
    #[serde(flatten)]
    report: &'a FitReport,
}

fn load_params(path: &Path, frame: usize) -> Result<BodyParams<f64>, Failure> {
    let file: ParamsFile = io::read_json(path)?;
    Ok(file.frame(frame)?.clone())
}

fn warn_obj(path: &Path, warnings: &io::ObjWarnings) {
    if !warnings.is_empty() {
        eprintln!("{}", json!({ "warning": { "file": path.display().to_string(), "polygons_triangulated": warnings.polygons_triangulated } }));
    }
}

fn read_mesh(path: &Path) -> Result<crate::Mesh, Failure> {
    let (mesh, warnings) = io::read_obj(path)?;
    warn_obj(path, &warnings);
    Ok(mesh)
}

fn parse_preset(arg: &str) -> Result<SynthPreset, Failure> {
    let kind = match arg {
        "capsule_biped" => SynthKind::CapsuleBiped,
        "cylinder_chain" => SynthKind::CylinderChain,
        "sphere" => SynthKind::Sphere,
        path => return Ok(io::read_json(Path::new(path))?),
    };
    Ok(SynthPreset { kind, ..SynthPreset::default() })
}

fn execute(command: Command) -> CmdResult {
    match command {
        Command::Transfer { model, spec, out, report, dtype } => {
            let (source, _) = io::read_model(&model)?;
            let specs = match io::read_json::<SpecFile>(&spec)? {
                SpecFile::Rounds { rounds } => rounds,
                SpecFile::List(list) => list,
                SpecFile::One(one) => vec![one],
            };
            let (lite, rep) = apply_transfer(&source, &specs)?;
            io::write_model(&out, &lite, dtype.into())?;
            emit(&rep, report.as_deref())
        }
        Command::Pose { model, params, frame, out } => {
            let (model, _) = io::read_model(&model)?;
            let p = load_params(&params, frame)?;
            let posed = lbs_forward(&model, &p)?;
            io::write_obj(&out, &model.mesh_with(posed.vertices.clone()))?;
            let joints: Vec<[f64; 3]> = posed.joints_posed().iter().map(|j| [j.x, j.y, j.z]).collect();
            emit(&json!({ "frame": frame, "vertices": posed.vertices.len(), "joints": joints }), None)
        }
        Command::Fit { model, params, frame, scan, config, out, report, stage, displacement } => {
            let (model, _) = io::read_model(&model)?;
            let p = load_params(&params, frame)?;
            let scan = read_mesh(&scan)?;
            let cfg: FitConfig = match config {
                Some(c) => io::read_json(&c)?,
                None => FitConfig::default(),
            };
            let (stages, name) = match stage {
                StageArg::One => (Stages::One, "1"),
                StageArg::Two => (Stages::Two, "2"),
                StageArg::Both => (Stages::Both, "both"),
            };
            let result = fit(&model, &p, &scan, &cfg, stages)?;
            io::write_obj(&out, &result.fitted)?;
            if let Some(d) = displacement {
                io::write_json(&d, &DisplacementFile { displacement: result.displacement.clone() })?;
            }
            let rep = FitOutputReport { stage: name, vertices: result.fitted.num_vertices(), report: &result.report };
            emit(&rep, report.as_deref())
        }
        Command::Triangulate { keypoints, cameras, tau, confidence, sample_views, p, seed, out } => {
            let k2d: Keypoints2D<f64> = io::read_json(&keypoints)?;
            let cams = io::read_cameras(&cameras)?;
            let params = RansacParams { tau, p, v: sample_views, conf_min: confidence, seed, ..RansacParams::default() };
            let k3d = triangulate_sequence(&k2d, &cams, &params)?;
            emit(&k3d, Some(&out))
        }
        Command::EvalCd { a, b, samples, seed, out } => {
            let (ma, mb) = (read_mesh(&a)?, read_mesh(&b)?);
            let cd = chamfer_distance(&ma, &mb, samples, seed)?;
            emit(&MetricReport::chamfer(cd, samples), out.as_deref())
        }
        Command::EvalImg { a, b, mask, out } => {
            let (ia, ib) = (io::read_png(&a)?, io::read_png(&b)?);
            let mask = mask.map(|m| io::read_mask(&m)).transpose()?;
            emit(&MetricReport::images(&ia, &ib, mask.as_ref())?, out.as_deref())
        }
        Command::Render { mesh, texture, cameras, camera_id, out, mask } => {
            let mesh = read_mesh(&mesh)?;
            let tex = io::read_png(&texture)?;
            let cams = io::read_cameras(&cameras)?;
            let cam = cams.get(&camera_id).ok_or_else(|| Failure::new("invalid", format!("no camera with id {camera_id:?}")))?;
            let (image, coverage) = render(&mesh, &tex, cam)?;
            io::write_png(&out, &image)?;
            if let Some(m) = mask {
                io::write_mask(&m, &coverage)?;
            }
            emit(&json!({ "width": image.width, "height": image.height, "mask_pixels": coverage.count() }), None)
        }
        Command::Synth { preset, out_dir, seed, dtype } => {
            let mut preset = parse_preset(&preset)?;
            if let Some(s) = seed {
                preset.seed = s;
            }
            write_scenario(&preset, &out_dir, dtype.into())
        }
        Command::Graph { model, k, alpha, seed, out } => {
            let (model, _) = io::read_model(&model)?;
            let template = model.template_mesh()?;
            let graph = build_graph(&template, &build_vertex_graph(&template), k, alpha, seed)?;
            emit(&graph, Some(&out))
        }
    }
}

/// File names of a synthetic scenario, relative to its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub preset: String,
    pub model: String,
    pub params: String,
    pub scan: String,
    pub true_displacement: String,
    pub cameras: String,
    pub keypoints: String,
    pub true_joints: String,
    pub fit_config: String,
    pub texture: String,
    pub textured_mesh: String,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            preset: "preset.json".into(),
            model: "model.avm".into(),
            params: "params.json".into(),
            scan: "scan.obj".into(),
            true_displacement: "true_displacement.json".into(),
            cameras: "cameras.json".into(),
            keypoints: "keypoints2d.json".into(),
            true_joints: "true_joints.json".into(),
            fit_config: "fit.json".into(),
            texture: "texture.png".into(),
            textured_mesh: "posed.obj".into(),
        }
    }
}

/// Writes model, poses, a displaced scan of frame 0, camera rig, noisy keypoints and their
/// ground truth, a default fit config and a textured posed mesh into `dir`.
pub fn write_scenario(preset: &SynthPreset, dir: &Path, dtype: Dtype) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new("io", format!("{}: {e}", dir.display())))?;
    let names = Scenario::default();
    let at = |name: &str| dir.join(name);
    let model = synth::make_model::<f64>(preset)?;
    let rig = synth::make_rig(preset)?;
    let (scan, truth) = synth::make_dense_scan(preset, &rig.params[0], &preset.displacement, preset.scan_oversample)?;

    io::write_json(&at(&names.preset), preset)?;
    io::write_model(&at(&names.model), &model, dtype)?;
    io::write_json(&at(&names.params), &ParamsFile { frames: rig.params.clone() })?;
    io::write_obj(&at(&names.scan), &scan)?;
    io::write_json(&at(&names.true_displacement), &DisplacementFile { displacement: truth })?;
    io::write_cameras(&at(&names.cameras), &rig.cameras)?;
    io::write_json(&at(&names.keypoints), &rig.keypoints)?;
    let joints: Vec<_> = rig
        .joints
        .iter()
        .zip(&rig.outlier_views)
        .enumerate()
        .map(|(f, (j, o))| json!({ "frame": f, "points": j.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>(), "outlier_views": o }))
        .collect();
    io::write_json(&at(&names.true_joints), &json!({ "frames": joints }))?;
    io::write_json(&at(&names.fit_config), &FitConfig::default())?;
    io::write_png(&at(&names.texture), &synth::checker_texture(256, 8))?;
    let mut posed = model.mesh_with(lbs_forward(&model, &rig.params[0])?.vertices);
    posed.texture_path = Some(names.texture.clone());
    io::write_obj(&at(&names.textured_mesh), &posed)?;
    emit(&names, Some(&at("scenario.json")))
}
