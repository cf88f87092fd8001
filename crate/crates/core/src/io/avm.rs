use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{io_err, read_json, to_json_string, IoError};
use crate::body::ParametricModel;
use crate::geometry::Face;

pub const FORMAT: &str = "avatarfit-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
    pub byte_length: usize,
}

/// JSON half of the container. Tensors live in the blob file named by `blob`, resolved
/// relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub num_vertices: usize,
    pub num_joints: usize,
    pub shape_dim: usize,
    pub expr_dim: usize,
    /// Parent joint index, `-1` for the root.
    pub parents: Vec<i64>,
    pub blob: String,
    pub tensors: BTreeMap<String, TensorEntry>,
    pub faces: Vec<Face>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uv_faces: Option<Vec<Face>>,
}

const REQUIRED: [&str; 6] = ["template", "shape_dirs", "expr_dirs", "pose_dirs", "joint_regressor", "skin_weights"];

fn blob_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".bin");
    manifest.with_file_name(name)
}

fn push_values(blob: &mut Vec<u8>, values: impl Iterator<Item = f64>, dtype: Dtype) {
    for v in values {
        match dtype {
            Dtype::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => blob.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |r| (0..m.ncols()).map(move |c| m[(r, c)]))
}

/// Serializes `model` with every tensor stored as `dtype`. Returns the manifest and blob.
pub fn encode_model(model: &ParametricModel<f64>, blob_name: &str, dtype: Dtype) -> (Manifest, Vec<u8>) {
    let n = model.num_vertices();
    let template = DMatrix::from_fn(n, 3, |v, a| model.template[v][a]);
    let mut tensors: Vec<(&str, DMatrix<f64>)> = vec![
        ("template", template),
        ("shape_dirs", model.shape_dirs.clone()),
        ("expr_dirs", model.expr_dirs.clone()),
        ("pose_dirs", model.pose_dirs.clone()),
        ("joint_regressor", model.joint_regressor.clone()),
        ("skin_weights", model.skin_weights.clone()),
    ];
    if let Some(uv) = &model.uv_coords {
        tensors.push(("uv_coords", DMatrix::from_fn(uv.len(), 2, |i, a| uv[i][a])));
    }
    let mut blob = Vec::new();
    let mut entries = BTreeMap::new();
    for (name, m) in &tensors {
        let byte_offset = blob.len();
        push_values(&mut blob, row_major(m), dtype);
        entries.insert(
            name.to_string(),
            TensorEntry { dtype, shape: vec![m.nrows(), m.ncols()], byte_offset, byte_length: blob.len() - byte_offset },
        );
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        name: model.name.clone(),
        num_vertices: n,
        num_joints: model.num_joints(),
        shape_dim: model.shape_dim(),
        expr_dim: model.expr_dim(),
        parents: model.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect(),
        blob: blob_name.into(),
        tensors: entries,
        faces: model.faces.clone(),
        uv_faces: model.uv_faces.clone(),
    };
    (manifest, blob)
}

/// Writes `path` (manifest) and `path.bin` (blob).
pub fn write_model(path: &Path, model: &ParametricModel<f64>, dtype: Dtype) -> Result<(), IoError> {
    let blob_file = blob_path(path);
    let blob_name = blob_file.file_name().unwrap().to_string_lossy().into_owned();
    let (manifest, blob) = encode_model(model, &blob_name, dtype);
    fs::write(&blob_file, blob).map_err(|e| io_err(&blob_file, e))?;
    fs::write(path, to_json_string(&manifest)).map_err(|e| io_err(path, e))
}

fn tensor(manifest: &Manifest, blob: &[u8], name: &str, expected: [usize; 2]) -> Result<Option<DMatrix<f64>>, IoError> {
    let Some(e) = manifest.tensors.get(name) else { return Ok(None) };
    if e.shape != expected {
        return Err(IoError::ShapeMismatch { tensor: name.into(), expected: expected.to_vec(), found: e.shape.clone() });
    }
    let count = expected[0] * expected[1];
    if e.byte_length != count * e.dtype.size() {
        return Err(IoError::Manifest(format!(
            "tensor {name}: byte_length {} does not match shape {:?} of {:?}",
            e.byte_length, e.shape, e.dtype
        )));
    }
    let end = e.byte_offset.saturating_add(e.byte_length);
    if end > blob.len() {
        return Err(IoError::BlobTruncated { tensor: name.into(), needed: end, available: blob.len() });
    }
    let bytes = &blob[e.byte_offset..end];
    let values: Vec<f64> = match e.dtype {
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok(Some(DMatrix::from_row_slice(expected[0], expected[1], &values)))
}

/// Checks the manifest against the blob and rebuilds the model, then validates it.
pub fn decode_model(manifest: &Manifest, blob: &[u8]) -> Result<ParametricModel<f64>, IoError> {
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(IoError::Manifest(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    if let Some(missing) = REQUIRED.iter().find(|t| !manifest.tensors.contains_key(**t)) {
        return Err(IoError::Manifest(format!("missing tensor {missing}")));
    }
    let mut ranges: Vec<(usize, usize, &str)> =
        manifest.tensors.iter().map(|(k, e)| (e.byte_offset, e.byte_offset.saturating_add(e.byte_length), k.as_str())).collect();
    ranges.sort();
    for w in ranges.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(IoError::Manifest(format!("tensors {} and {} overlap", w[0].2, w[1].2)));
        }
    }
    let (n, k) = (manifest.num_vertices, manifest.num_joints);
    if k == 0 {
        return Err(IoError::Manifest("model has no joints".into()));
    }
    if manifest.parents.len() != k {
        return Err(IoError::Manifest(format!("{} parents for {k} joints", manifest.parents.len())));
    }
    let get = |name: &str, shape: [usize; 2]| tensor(manifest, blob, name, shape).map(|t| t.expect("presence checked"));
    let template = get("template", [n, 3])?;
    let shape_dirs = get("shape_dirs", [3 * n, manifest.shape_dim])?;
    let expr_dirs = get("expr_dirs", [3 * n, manifest.expr_dim])?;
    let pose_dirs = get("pose_dirs", [3 * n, 9 * (k - 1)])?;
    let joint_regressor = get("joint_regressor", [k, n])?;
    let skin_weights = get("skin_weights", [n, k])?;
    let uv_coords = match manifest.tensors.get("uv_coords") {
        Some(e) => {
            let rows = e.shape.first().copied().unwrap_or(0);
            tensor(manifest, blob, "uv_coords", [rows, 2])?.map(|m| (0..rows).map(|i| Vector2::new(m[(i, 0)], m[(i, 1)])).collect())
        }
        None => None,
    };
    if uv_coords.is_some() != manifest.uv_faces.is_some() {
        return Err(IoError::Manifest("uv_coords and uv_faces must be given together".into()));
    }
    let parents = manifest
        .parents
        .iter()
        .map(|&p| match p {
            -1 => Ok(None),
            p if p >= 0 => Ok(Some(p as usize)),
            p => Err(IoError::Manifest(format!("invalid parent index {p}"))),
        })
        .collect::<Result<_, _>>()?;
    let model = ParametricModel {
        name: manifest.name.clone(),
        template: (0..n).map(|v| Vector3::new(template[(v, 0)], template[(v, 1)], template[(v, 2)])).collect(),
        faces: manifest.faces.clone(),
        uv_coords,
        uv_faces: manifest.uv_faces.clone(),
        shape_dirs,
        expr_dirs,
        pose_dirs,
        joint_regressor,
        skin_weights,
        parents,
    };
    model.validate()?;
    Ok(model)
}

/// Reads a manifest and its blob. Returns the model and the storage precision of the
/// template tensor.
pub fn read_model(path: &Path) -> Result<(ParametricModel<f64>, Dtype), IoError> {
    let manifest: Manifest = read_json(path)?;
    let blob_file = path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_file).map_err(|e| io_err(&blob_file, e))?;
    let model = decode_model(&manifest, &blob)?;
    Ok((model, manifest.tensors["template"].dtype))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::ModelError;
    use crate::synth::{make_model, SynthKind, SynthPreset};

    fn model() -> ParametricModel<f64> {
        make_model(&SynthPreset { kind: SynthKind::CylinderChain, resolution: 1, blend_shapes: true, ..SynthPreset::default() }).unwrap()
    }

    #[test]
    fn f64_round_trip_is_exact_and_reencoding_is_byte_identical() {
        let m = model();
        let (manifest, blob) = encode_model(&m, "x.bin", Dtype::F64);
        let back = decode_model(&manifest, &blob).unwrap();
        assert_eq!(back, m);
        let (manifest2, blob2) = encode_model(&back, "x.bin", Dtype::F64);
        assert_eq!((manifest2, blob2), (manifest, blob));
    }

    #[test]
    fn f32_storage_is_stable_after_one_trip() {
        let (manifest, blob) = encode_model(&model(), "x.bin", Dtype::F32);
        let once = decode_model(&manifest, &blob).unwrap();
        assert_eq!(encode_model(&once, "x.bin", Dtype::F32).1, blob);
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.avm");
        let m = model();
        write_model(&path, &m, Dtype::F64).unwrap();
        assert!(dir.path().join("m.avm.bin").exists());
        let (back, dtype) = read_model(&path).unwrap();
        assert_eq!((back, dtype), (m, Dtype::F64));
    }

    #[test]
    fn wrong_shape_names_the_tensor() {
        let (mut manifest, blob) = encode_model(&model(), "x.bin", Dtype::F64);
        manifest.tensors.get_mut("joint_regressor").unwrap().shape = vec![2, 5];
        match decode_model(&manifest, &blob) {
            Err(IoError::ShapeMismatch { tensor, .. }) => assert_eq!(tensor, "joint_regressor"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_blob_and_overlap_and_missing() {
        let (manifest, blob) = encode_model(&model(), "x.bin", Dtype::F64);
        assert!(matches!(decode_model(&manifest, &blob[..blob.len() - 8]), Err(IoError::BlobTruncated { .. })));
        let mut overlap = manifest.clone();
        overlap.tensors.get_mut("skin_weights").unwrap().byte_offset = 0;
        assert!(matches!(decode_model(&overlap, &blob), Err(IoError::Manifest(_))));
        let mut missing = manifest;
        missing.tensors.remove("pose_dirs");
        assert!(matches!(decode_model(&missing, &blob), Err(IoError::Manifest(_))));
    }

    #[test]
    fn bad_skin_weight_row_fails_on_load() {
        let mut m = model();
        let k = m.num_joints();
        for j in 0..k {
            m.skin_weights[(0, j)] *= 0.9;
        }
        let (manifest, blob) = encode_model(&m, "x.bin", Dtype::F64);
        assert!(matches!(decode_model(&manifest, &blob), Err(IoError::Model(ModelError::SkinWeightSum { vertex: 0, .. }))));
    }
}
