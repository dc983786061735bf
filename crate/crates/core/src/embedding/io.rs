//! On-disk episodes.
//!
//! An episode is a UTF-8 JSON manifest plus three blobs in the
//! [`crate::blob`] layout with magic `MMGEMB01` and `f32` values:
//!
//! | blob        | rows    | cols   |
//! |-------------|---------|--------|
//! | `patches`   | `T · N` | `d_V`  |
//! | `attention` | `T`     | `N`    |
//! | `text`      | `1`     | `d_T`  |
//!
//! Blob paths in the manifest are relative to the manifest's directory.
//! A dataset directory adds a `dataset.json` index naming every manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Episode, Frame, Region, SynthConfig};
use crate::blob::{self, EPISODE_MAGIC};
use crate::error::{Error, Result};

pub const EPISODE_FORMAT: &str = "mmgraph-episode-v1";
pub const DATASET_FORMAT: &str = "mmgraph-dataset-v1";
pub const DATASET_INDEX: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeManifest {
    pub format: String,
    pub class_id: usize,
    pub label: String,
    pub frames: usize,
    pub patches: usize,
    pub visual_dim: usize,
    pub text_dim: usize,
    /// Regions of each frame, in frame order.
    pub regions: Vec<Vec<Region>>,
    /// Frame index → annotation index.
    pub alignment: BTreeMap<usize, usize>,
    pub patch_blob: String,
    pub attention_blob: String,
    pub text_blob: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub episodes: Vec<String>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Writes `<stem>.json` and its blobs into `dir`; returns the manifest path.
pub fn save_episode(episode: &Episode, dir: &Path, stem: &str) -> Result<PathBuf> {
    episode.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = episode.num_frames();
    let (n, dv, dt) = (episode.num_patches, episode.visual_dim, episode.text_dim);

    let manifest = EpisodeManifest {
        format: EPISODE_FORMAT.to_string(),
        class_id: episode.class_id,
        label: episode.annotation.clone(),
        frames: t,
        patches: n,
        visual_dim: dv,
        text_dim: dt,
        regions: episode.frames.iter().map(|f| f.regions.clone()).collect(),
        alignment: episode.alignment.clone(),
        patch_blob: format!("{stem}.patches.bin"),
        attention_blob: format!("{stem}.attention.bin"),
        text_blob: format!("{stem}.text.bin"),
    };

    let patches: Vec<f32> = episode
        .frames
        .iter()
        .flat_map(|f| f.patch_embeddings.iter().copied())
        .collect();
    let attention: Vec<f32> = episode.frames.iter().flat_map(|f| f.attention.iter().copied()).collect();
    blob::write_f32(&dir.join(&manifest.patch_blob), EPISODE_MAGIC, t * n, dv, &patches)?;
    blob::write_f32(&dir.join(&manifest.attention_blob), EPISODE_MAGIC, t, n, &attention)?;
    blob::write_f32(&dir.join(&manifest.text_blob), EPISODE_MAGIC, 1, dt, &episode.text_embedding)?;

    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_episode(manifest_path: &Path) -> Result<Episode> {
    let manifest: EpisodeManifest = read_json(manifest_path)?;
    if manifest.format != EPISODE_FORMAT {
        return Err(Error::Manifest {
            path: manifest_path.to_path_buf(),
            detail: format!("format `{}`, expected `{EPISODE_FORMAT}`", manifest.format),
        });
    }
    let (t, n, dv, dt) = (manifest.frames, manifest.patches, manifest.visual_dim, manifest.text_dim);
    if manifest.regions.len() != t {
        return Err(Error::Manifest {
            path: manifest_path.to_path_buf(),
            detail: format!("{} region lists for {t} frames", manifest.regions.len()),
        });
    }
    for (frame, regions) in manifest.regions.iter().enumerate() {
        for r in regions {
            if let Some(&p) = r.patches.iter().find(|&&p| p >= n) {
                return Err(Error::IndexOutOfRange(format!(
                    "{}: frame {frame} region {} patch {p} ≥ {n}",
                    manifest_path.display(),
                    r.name
                )));
            }
        }
    }
    if let Some((&f, _)) = manifest.alignment.iter().find(|(&f, _)| f >= t) {
        return Err(Error::IndexOutOfRange(format!(
            "{}: alignment names frame {f} of {t}",
            manifest_path.display()
        )));
    }

    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let patches = blob::read_f32(&base.join(&manifest.patch_blob), EPISODE_MAGIC, t * n, dv)?;
    let attention = blob::read_f32(&base.join(&manifest.attention_blob), EPISODE_MAGIC, t, n)?;
    let text = blob::read_f32(&base.join(&manifest.text_blob), EPISODE_MAGIC, 1, dt)?;

    let frames = manifest
        .regions
        .into_iter()
        .enumerate()
        .map(|(i, regions)| Frame {
            patch_embeddings: patches[i * n * dv..(i + 1) * n * dv].to_vec(),
            attention: attention[i * n..(i + 1) * n].to_vec(),
            regions,
        })
        .collect();
    let episode = Episode {
        num_patches: n,
        visual_dim: dv,
        text_dim: dt,
        frames,
        text_embedding: text,
        annotation: manifest.label,
        class_id: manifest.class_id,
        alignment: manifest.alignment,
    };
    episode.validate()?;
    Ok(episode)
}

/// Writes every episode as `ep_#####` plus a `dataset.json` index.
pub fn save_dataset(dir: &Path, episodes: &[Episode], synth: Option<&SynthConfig>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(episodes.len());
    for (i, e) in episodes.iter().enumerate() {
        let stem = format!("ep_{i:05}");
        save_episode(e, dir, &stem)?;
        names.push(format!("{stem}.json"));
    }
    let index = DatasetIndex {
        format: DATASET_FORMAT.to_string(),
        synth: synth.cloned(),
        episodes: names,
    };
    write_json(&dir.join(DATASET_INDEX), &index)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Episode>> {
    let index_path = dir.join(DATASET_INDEX);
    let index: DatasetIndex = read_json(&index_path)?;
    if index.format != DATASET_FORMAT {
        return Err(Error::Manifest {
            path: index_path,
            detail: format!("format `{}`, expected `{DATASET_FORMAT}`", index.format),
        });
    }
    index.episodes.iter().map(|name| load_episode(&dir.join(name))).collect()
}
