use serde::{Deserialize, Serialize};

use super::{EdgeKind, MultimodalGraph, Node};
use crate::embedding::{Episode, ObjectFeature};
use crate::error::{Error, Result};
use crate::tensor::{cosine_sim, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Object ↔ object edges need at least this cosine.
    pub spatial_threshold: f64,
    /// Text ↔ object edges need at least this shared-space cosine.
    pub semantic_threshold: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            spatial_threshold: 0.3,
            semantic_threshold: 0.3,
        }
    }
}

impl GraphConfig {
    /// Thresholds outside `[-1, 1]` are clamped; NaN is rejected.
    fn clamped(&self) -> Result<(f64, f64)> {
        if self.spatial_threshold.is_nan() || self.semantic_threshold.is_nan() {
            return Err(Error::InvalidConfig("graph thresholds must be numbers".into()));
        }
        Ok((
            self.spatial_threshold.clamp(-1.0, 1.0),
            self.semantic_threshold.clamp(-1.0, 1.0),
        ))
    }
}

/// Maps visual (`d_V`) and text (`d_T`) features into a shared `d_s` space
/// so cross-modal pairs can be compared.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedProjection {
    /// `d_s × d_V`
    pub visual: Tensor,
    /// `d_s × d_T`
    pub text: Tensor,
}

fn apply(m: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    let (r, c) = m.rows_cols();
    if c != x.len() {
        return Err(Error::Shape {
            op: "projection",
            lhs: vec![r, c],
            rhs: vec![x.len()],
        });
    }
    Ok((0..r).map(|i| crate::tensor::dot(m.row(i), x)).collect())
}

impl SharedProjection {
    pub fn visual(&self, x: &[f64]) -> Result<Vec<f64>> {
        apply(&self.visual, x)
    }

    pub fn text(&self, x: &[f64]) -> Result<Vec<f64>> {
        apply(&self.text, x)
    }
}

/// Node features ready for graph construction.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    /// `T × d_V`, possibly temporally aggregated.
    pub frames: Vec<Vec<f64>>,
    pub objects: Vec<ObjectFeature>,
    /// `None` leaves the text node out.
    pub text: Option<Vec<f64>>,
}

impl GraphInput {
    /// Raw frame means, region embeddings and the text feature.
    pub fn from_episode(episode: &Episode) -> Result<Self> {
        episode.validate()?;
        Ok(Self {
            frames: episode.frame_embeddings()?,
            objects: episode.object_embeddings()?,
            text: Some(episode.text_feature()),
        })
    }
}

/// Cosine similarity of two same-size features.
pub fn initial_edge_weight(f_i: &[f64], f_j: &[f64]) -> Result<f64> {
    cosine_sim(f_i, f_j, false)
}

/// Builds the typed graph. Nodes come in the order frames, objects (frame
/// order), text. Text ↔ visual cosines use `projection` when given, and the
/// raw features otherwise (which then must share a dimension).
pub fn build_graph(
    input: &GraphInput,
    cfg: &GraphConfig,
    projection: Option<&SharedProjection>,
) -> Result<MultimodalGraph> {
    let (spatial_thr, semantic_thr) = cfg.clamped()?;
    let t = input.frames.len();
    if t == 0 {
        return Err(Error::Empty("episode has no frames"));
    }
    if let Some(o) = input.objects.iter().find(|o| o.frame_index >= t) {
        return Err(Error::IndexOutOfRange(format!("object in frame {} of {t}", o.frame_index)));
    }

    let mut g = MultimodalGraph::new();
    for (i, f) in input.frames.iter().enumerate() {
        g.add_node(Node::frame(i, f.clone()))?;
    }
    let mut by_frame: Vec<Vec<usize>> = vec![Vec::new(); t];
    for o in &input.objects {
        let id = g.add_node(Node::object(o.frame_index, o.region_id.clone(), o.feature.clone()))?;
        by_frame[o.frame_index].push(id);
    }
    let text = match &input.text {
        Some(f) => Some(g.add_node(Node::text(f.clone()))?),
        None => None,
    };

    for i in 1..t {
        let w = initial_edge_weight(&input.frames[i - 1], &input.frames[i])?;
        g.add_edge(EdgeKind::Temporal, i - 1, i, w)?;
    }
    for (frame, objects) in by_frame.iter().enumerate() {
        for (k, &a) in objects.iter().enumerate() {
            let w = initial_edge_weight(&g.node(frame).feature, &g.node(a).feature)?;
            g.add_edge(EdgeKind::Spatial, frame, a, w)?;
            for &b in &objects[k + 1..] {
                let w = initial_edge_weight(&g.node(a).feature, &g.node(b).feature)?;
                if w >= spatial_thr {
                    g.add_edge(EdgeKind::Spatial, a, b, w)?;
                }
            }
        }
    }
    if let Some(text) = text {
        let (t_shared, project): (Vec<f64>, Box<dyn Fn(&[f64]) -> Result<Vec<f64>>>) = match projection {
            Some(p) => (p.text(&g.node(text).feature)?, Box::new(|x| p.visual(x))),
            None => (g.node(text).feature.clone(), Box::new(|x| Ok(x.to_vec()))),
        };
        for frame in 0..t {
            let w = initial_edge_weight(&t_shared, &project(&g.node(frame).feature)?)?;
            g.add_edge(EdgeKind::Semantic, frame, text, w)?;
        }
        for &o in by_frame.iter().flatten() {
            let w = initial_edge_weight(&t_shared, &project(&g.node(o).feature)?)?;
            if w >= semantic_thr {
                g.add_edge(EdgeKind::Semantic, o, text, w)?;
            }
        }
    }
    g.canonicalize();
    Ok(g)
}
