//! Episodes: the synchronized multimodal samples fed to the graph builder.
//!
//! An episode carries what a video/text encoder pair would emit: per-frame
//! patch embeddings with attention scores, salient regions over those
//! patches, and one sentence embedding for the annotation. Episodes are
//! either generated ([`synth`]) or read from disk ([`io`]).

pub mod io;
pub mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{synth_dataset, text_prototypes, SynthConfig};

/// A named set of patch indices within one frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub patches: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// `num_patches × visual_dim`, row-major.
    pub patch_embeddings: Vec<f32>,
    /// One non-negative score per patch.
    pub attention: Vec<f32>,
    pub regions: Vec<Region>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub num_patches: usize,
    pub visual_dim: usize,
    pub text_dim: usize,
    pub frames: Vec<Frame>,
    pub text_embedding: Vec<f32>,
    pub annotation: String,
    pub class_id: usize,
    /// Frame index → annotation index.
    pub alignment: BTreeMap<usize, usize>,
}

impl Episode {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Empty("episode has no frames"));
        }
        if self.num_patches == 0 {
            return Err(Error::Empty("episode has no patches"));
        }
        if self.text_embedding.len() != self.text_dim {
            return Err(Error::Shape {
                op: "episode text embedding",
                lhs: vec![self.text_dim],
                rhs: vec![self.text_embedding.len()],
            });
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.patch_embeddings.len() != self.num_patches * self.visual_dim {
                return Err(Error::Shape {
                    op: "episode patch embeddings",
                    lhs: vec![self.num_patches, self.visual_dim],
                    rhs: vec![frame.patch_embeddings.len()],
                });
            }
            if frame.attention.len() != self.num_patches {
                return Err(Error::Shape {
                    op: "episode attention",
                    lhs: vec![self.num_patches],
                    rhs: vec![frame.attention.len()],
                });
            }
            if frame.attention.iter().any(|a| !a.is_finite() || *a < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "frame {t}: attention scores must be finite and non-negative"
                )));
            }
            for region in &frame.regions {
                if let Some(&p) = region.patches.iter().find(|&&p| p >= self.num_patches) {
                    return Err(Error::IndexOutOfRange(format!(
                        "frame {t} region {}: patch {p} of {}",
                        region.name, self.num_patches
                    )));
                }
                if region.patches.is_empty() || !region.patches.iter().any(|&p| frame.attention[p] > 0.0) {
                    return Err(Error::DegenerateRegion(region.patches.clone()));
                }
            }
        }
        let covered: Vec<usize> = self.alignment.keys().copied().collect();
        if covered != (0..self.frames.len()).collect::<Vec<_>>() {
            return Err(Error::IndexOutOfRange(format!(
                "alignment covers frames {covered:?}, expected 0..{}",
                self.frames.len()
            )));
        }
        Ok(())
    }

    /// Mean patch embedding of every frame, `T × visual_dim`.
    pub fn frame_embeddings(&self) -> Result<Vec<Vec<f64>>> {
        self.frames
            .iter()
            .map(|f| frame_embedding(&f.patch_embeddings, self.visual_dim))
            .collect()
    }

    /// Attention-weighted embedding of every region, in frame order.
    pub fn object_embeddings(&self) -> Result<Vec<ObjectFeature>> {
        let mut out = Vec::new();
        for (t, f) in self.frames.iter().enumerate() {
            for region in &f.regions {
                out.push(ObjectFeature {
                    frame_index: t,
                    region_id: region.name.clone(),
                    feature: object_embedding(&f.patch_embeddings, self.visual_dim, &f.attention, &region.patches)?,
                });
            }
        }
        Ok(out)
    }

    pub fn text_feature(&self) -> Vec<f64> {
        self.text_embedding.iter().map(|&x| x as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectFeature {
    pub frame_index: usize,
    pub region_id: String,
    pub feature: Vec<f64>,
}

/// Mean over the patch rows of a row-major `N × dim` block.
pub fn frame_embedding<T: Copy + Into<f64>>(patches: &[T], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || patches.is_empty() {
        return Err(Error::Empty("frame with no patches"));
    }
    if patches.len() % dim != 0 {
        return Err(Error::DataLength {
            shape: vec![patches.len() / dim, dim],
            len: patches.len(),
        });
    }
    let n = patches.len() / dim;
    let mut out = vec![0.0; dim];
    for row in patches.chunks_exact(dim) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v.into();
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Ok(out)
}

/// Attention shares of the patches in a region; they sum to one.
pub fn region_weights<T: Copy + Into<f64>>(attention: &[T], region: &[usize]) -> Result<Vec<f64>> {
    if region.is_empty() {
        return Err(Error::Empty("region with no patches"));
    }
    let mut scores = Vec::with_capacity(region.len());
    for &i in region {
        let a: f64 = attention
            .get(i)
            .copied()
            .ok_or_else(|| Error::IndexOutOfRange(format!("patch {i} of {}", attention.len())))?
            .into();
        scores.push(a);
    }
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateRegion(region.to_vec()));
    }
    Ok(scores.into_iter().map(|a| a / total).collect())
}

/// Attention-weighted sum of the region's patch rows.
pub fn object_embedding<T: Copy + Into<f64>>(
    patches: &[T],
    dim: usize,
    attention: &[T],
    region: &[usize],
) -> Result<Vec<f64>> {
    let weights = region_weights(attention, region)?;
    let mut out = vec![0.0; dim];
    for (&i, w) in region.iter().zip(weights) {
        let row = patches
            .get(i * dim..(i + 1) * dim)
            .ok_or_else(|| Error::IndexOutOfRange(format!("patch row {i}")))?;
        for (o, &v) in out.iter_mut().zip(row) {
            *o += w * v.into();
        }
    }
    Ok(out)
}

/// Linear-interpolated `q`-quantile of the attention scores (the usual
/// "type 7" estimator).
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Regions for data that ships without them: patches scoring strictly above
/// the `q`-quantile, split into runs of consecutive patch indices.
pub fn extract_regions<T: Copy + Into<f64>>(attention: &[T], q: f64) -> Result<Vec<Vec<usize>>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!("quantile {q} must lie in (0, 1)")));
    }
    if attention.is_empty() {
        return Ok(Vec::new());
    }
    let values: Vec<f64> = attention.iter().map(|&a| a.into()).collect();
    let cut = quantile(&values, q);
    let mut regions = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v > cut {
            run.push(i);
        } else if !run.is_empty() {
            regions.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        regions.push(run);
    }
    Ok(regions)
}
