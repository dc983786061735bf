//! Checkpoints: a JSON manifest naming every tensor and one `f64` blob
//! (magic `MMGCKPT1`, `total × 1`) holding them back to back in manifest
//! order. `f64` storage keeps a save/load round trip bit-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelDims, ModelParams, Param, Variant};
use crate::blob::{self, CHECKPOINT_MAGIC};
use crate::embedding::io::{read_json, write_json};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "mmgraph-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub variant: Variant,
    pub dims: ModelDims,
    pub config: ModelConfig,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `path` (the manifest) and a sibling `.bin` blob.
pub fn save_checkpoint(params: &ModelParams, cfg: &ModelConfig, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let blob_name = blob_name(path);
    let mut values = Vec::with_capacity(params.num_values());
    let mut tensors = Vec::new();
    for p in params.params() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset: values.len(),
        });
        values.extend_from_slice(p.tensor.data());
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        variant: params.variant,
        dims: params.dims.clone(),
        config: cfg.clone(),
        blob: blob_name.clone(),
        tensors,
    };
    blob::write_f64(&sibling(path, &blob_name), CHECKPOINT_MAGIC, values.len(), 1, &values)?;
    write_json(path, &manifest)
}

fn blob_name(path: &Path) -> String {
    let stem = path.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
    format!("{stem}.bin")
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let manifest: CheckpointManifest = read_json(path)?;
    let bad = |detail: String| Error::Manifest {
        path: path.to_path_buf(),
        detail,
    };
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("format `{}`, expected `{CHECKPOINT_FORMAT}`", manifest.format)));
    }
    let total: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let values = blob::read_f64(&sibling(path, &manifest.blob), CHECKPOINT_MAGIC, total, 1)?;
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let n: usize = t.shape.iter().product();
        let data = values
            .get(t.offset..t.offset + n)
            .ok_or_else(|| bad(format!("tensor `{}` runs past the blob", t.name)))?;
        params.push(Param {
            name: t.name.clone(),
            tensor: Tensor::new(t.shape.clone(), data.to_vec())?,
        });
    }
    let params = ModelParams::from_parts(manifest.dims, manifest.variant, params).map_err(|e| bad(e.to_string()))?;
    if manifest.config.variant != params.variant {
        return Err(bad("config variant disagrees with parameters".into()));
    }
    Ok((params, manifest.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let dims = ModelDims::new(5, 3, 4);
        let params = ModelParams::init(&dims, Variant::Full, 12).unwrap();
        let cfg = ModelConfig::default();
        let path = dir.path().join("model.json");
        save_checkpoint(&params, &cfg, &path).unwrap();
        let (back, cfg2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg2, cfg);
        for (a, b) in params.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::init(&ModelDims::new(5, 3, 4), Variant::Full, 12).unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&params, &ModelConfig::default(), &path).unwrap();

        let mut m: CheckpointManifest = read_json(&path).unwrap();
        m.tensors[0].name = "renamed".into();
        write_json(&path, &m).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Manifest { .. })));

        save_checkpoint(&params, &ModelConfig::default(), &path).unwrap();
        let blob = dir.path().join("model.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        fs::remove_file(&blob).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::MissingFile { .. })));
    }
}
