//! The graph reasoning model.
//!
//! Parameters live in one flat, named list ([`ModelParams`]) so that the
//! optimizer, checkpoints and gradient checks can walk them uniformly.
//! [`forward`] runs the whole pipeline for one episode; the pieces
//! ([`phi`], [`psi`], [`gat_layer`], [`refine_edges`], [`adapt_topology`],
//! [`fuse`]) are public for inspection and testing.

mod checkpoint;
mod forward;
mod gat;
mod terms;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphConfig, SharedProjection, TemporalVars};
use crate::tensor::{SeededRng, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CHECKPOINT_FORMAT};
pub use forward::{
    forward, forward_graph, forward_tape, initial_states, prepare_graph, run_graph, Forward, ForwardTrace, NodeSources,
};
pub use gat::{gat_attention, gat_attention_values, gat_layer, gat_layer_values, Attention, DirectedPairs};
pub use terms::{adapt_topology, fuse, fuse_tape, phi, psi, refine_edges, AdaptView, TopologyChange};

/// Rungs of the ablation ladder, each adding one component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Frame and object nodes with node-wise layers; no message passing.
    VisualOnly,
    /// As `VisualOnly`, with the projected text feature concatenated at readout.
    PlusText,
    /// Full graph with modulated attention; fixed topology.
    StaticGraph,
    /// Everything, including edge refinement and topology adaptation.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::VisualOnly, Variant::PlusText, Variant::StaticGraph, Variant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::VisualOnly => "visual_only",
            Variant::PlusText => "plus_text",
            Variant::StaticGraph => "static_graph",
            Variant::Full => "full",
        }
    }

    pub fn has_text_node(self) -> bool {
        matches!(self, Variant::StaticGraph | Variant::Full)
    }

    pub fn message_passing(self) -> bool {
        self.has_text_node()
    }

    pub fn dynamic(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

/// Sizes that fix every parameter shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub visual_dim: usize,
    pub text_dim: usize,
    /// Shared space and GAT width.
    pub hidden: usize,
    pub layers: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn new(visual_dim: usize, text_dim: usize, num_classes: usize) -> Self {
        Self {
            visual_dim,
            text_dim,
            hidden: 32,
            layers: 2,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.visual_dim == 0 || self.text_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::InvalidConfig("at least one layer is required".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("at least two classes are required".into()));
        }
        Ok(())
    }
}

/// Behavior knobs that carry no learnable state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub graph: GraphConfig,
    pub prune_threshold: f64,
    pub add_threshold: f64,
    /// Multiply each message by its refined edge weight.
    pub weighted_messages: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            graph: GraphConfig::default(),
            prune_threshold: 0.1,
            add_threshold: 0.8,
            weighted_messages: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prune_threshold < self.add_threshold) {
            return Err(Error::InvalidConfig(format!(
                "prune_threshold {} must be below add_threshold {}",
                self.prune_threshold, self.add_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Every learnable tensor, in a fixed order:
///
/// ```text
/// temporal.w_query  temporal.w_key  temporal.w_value        d_V × d_V
/// gat.{l}.w                                                 d × d
/// gat.{l}.a                                                 2d × 1
/// gat.{l}.omega_temporal / omega_spatial / omega_semantic   scalar
/// gat.{l}.m                                                 d × d
/// adapt.lambda_temporal / lambda_spatial / lambda_semantic  scalar
/// fusion.w_v  (d × d_V)   fusion.w_t  (d × d_T)   fusion.a  (d × 1)
/// classifier.w  (d or 2d × K)   classifier.b  (1 × K)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub variant: Variant,
    params: Vec<Param>,
}

const PER_LAYER: usize = 6;

/// Index of a parameter group inside [`ModelParams`].
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    layers: usize,
}

impl Layout {
    pub fn temporal(&self) -> [usize; 3] {
        [0, 1, 2]
    }
    pub fn gat_w(&self, l: usize) -> usize {
        3 + PER_LAYER * l
    }
    pub fn gat_a(&self, l: usize) -> usize {
        self.gat_w(l) + 1
    }
    pub fn omega(&self, l: usize) -> [usize; 3] {
        let b = self.gat_w(l) + 2;
        [b, b + 1, b + 2]
    }
    pub fn gat_m(&self, l: usize) -> usize {
        self.gat_w(l) + 5
    }
    fn tail(&self) -> usize {
        3 + PER_LAYER * self.layers
    }
    pub fn lambda(&self) -> [usize; 3] {
        let b = self.tail();
        [b, b + 1, b + 2]
    }
    pub fn fusion_w_v(&self) -> usize {
        self.tail() + 3
    }
    pub fn fusion_w_t(&self) -> usize {
        self.tail() + 4
    }
    pub fn fusion_a(&self) -> usize {
        self.tail() + 5
    }
    pub fn classifier_w(&self) -> usize {
        self.tail() + 6
    }
    pub fn classifier_b(&self) -> usize {
        self.tail() + 7
    }
    pub fn len(&self) -> usize {
        self.tail() + 8
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

fn uniform(shape: [usize; 2], fan_in: usize, rng: &mut SeededRng) -> Tensor {
    Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

impl ModelParams {
    /// Matrices uniform in `±1/√fan_in`, ω and λ at `0.1`, bias zero.
    pub fn init(dims: &ModelDims, variant: Variant, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = SeededRng::new(seed);
        let (dv, dt, d, k) = (dims.visual_dim, dims.text_dim, dims.hidden, dims.num_classes);
        let mut params = Vec::new();
        let mut push = |name: String, tensor: Tensor| params.push(Param { name, tensor });
        for name in ["w_query", "w_key", "w_value"] {
            push(format!("temporal.{name}"), uniform([dv, dv], dv, &mut rng));
        }
        for l in 0..dims.layers {
            push(format!("gat.{l}.w"), uniform([d, d], d, &mut rng));
            push(format!("gat.{l}.a"), uniform([2 * d, 1], 2 * d, &mut rng));
            for kind in ["temporal", "spatial", "semantic"] {
                push(format!("gat.{l}.omega_{kind}"), Tensor::scalar(0.1));
            }
            push(format!("gat.{l}.m"), uniform([d, d], d, &mut rng));
        }
        for kind in ["temporal", "spatial", "semantic"] {
            push(format!("adapt.lambda_{kind}"), Tensor::scalar(0.1));
        }
        push("fusion.w_v".into(), uniform([d, dv], dv, &mut rng));
        push("fusion.w_t".into(), uniform([d, dt], dt, &mut rng));
        push("fusion.a".into(), uniform([d, 1], d, &mut rng));
        let readout = if variant == Variant::PlusText { 2 * d } else { d };
        push("classifier.w".into(), uniform([readout, k], readout, &mut rng));
        push("classifier.b".into(), Tensor::zeros([1, k]));
        let out = Self {
            dims: dims.clone(),
            variant,
            params,
        };
        debug_assert_eq!(out.params.len(), out.layout().len());
        Ok(out)
    }

    pub(crate) fn from_parts(dims: ModelDims, variant: Variant, params: Vec<Param>) -> Result<Self> {
        let reference = Self::init(&dims, variant, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (r, p) in reference.params.iter().zip(&params) {
            if r.name != p.name || r.tensor.shape() != p.tensor.shape() {
                return Err(Error::InvalidConfig(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    p.name,
                    p.tensor.shape(),
                    r.name,
                    r.tensor.shape()
                )));
            }
        }
        Ok(Self { dims, variant, params })
    }

    pub fn layout(&self) -> Layout {
        Layout {
            layers: self.dims.layers,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.params[index].tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.params[index].tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    fn scalar(&self, i: usize) -> f64 {
        self.params[i].tensor.item()
    }

    pub fn omega(&self, layer: usize) -> [f64; 3] {
        self.layout().omega(layer).map(|i| self.scalar(i))
    }

    pub fn lambda(&self) -> [f64; 3] {
        self.layout().lambda().map(|i| self.scalar(i))
    }

    /// The bilinear matrix shared by the last layer's φ and by ψ.
    pub fn final_m(&self) -> &Tensor {
        self.tensor(self.layout().gat_m(self.dims.layers - 1))
    }

    pub fn projection(&self) -> SharedProjection {
        let lay = self.layout();
        SharedProjection {
            visual: self.tensor(lay.fusion_w_v()).clone(),
            text: self.tensor(lay.fusion_w_t()).clone(),
        }
    }

    pub fn adapt_view<'a>(&'a self, cfg: &ModelConfig) -> AdaptView<'a> {
        AdaptView {
            lambda: self.lambda(),
            prune_threshold: cfg.prune_threshold,
            add_threshold: cfg.add_threshold,
            m: self.final_m(),
        }
    }

    /// Records every parameter on `tape` as a tracked leaf.
    pub fn bind(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            vars: self.params.iter().map(|p| tape.param(&p.tensor)).collect(),
            layout: self.layout(),
        }
    }

    /// Records every parameter as an untracked constant.
    pub fn bind_constant(&self, tape: &Tape) -> ParamVars {
        ParamVars {
            vars: self.params.iter().map(|p| tape.constant(p.tensor.clone())).collect(),
            layout: self.layout(),
        }
    }
}

/// Tape handles for one [`ModelParams`], index-aligned with it.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub vars: Vec<Var>,
    layout: Layout,
}

/// Tape handles of one GAT layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub w: Var,
    pub a: Var,
    pub omega: [Var; 3],
    pub m: Var,
}

impl ParamVars {
    pub fn temporal(&self) -> TemporalVars {
        let [q, k, v] = self.layout.temporal().map(|i| self.vars[i]);
        TemporalVars {
            query: q,
            key: k,
            value: v,
        }
    }

    pub fn layer(&self, l: usize) -> LayerVars {
        LayerVars {
            w: self.vars[self.layout.gat_w(l)],
            a: self.vars[self.layout.gat_a(l)],
            omega: self.layout.omega(l).map(|i| self.vars[i]),
            m: self.vars[self.layout.gat_m(l)],
        }
    }

    pub fn lambda(&self) -> [Var; 3] {
        self.layout.lambda().map(|i| self.vars[i])
    }

    pub fn fusion(&self) -> (Var, Var, Var) {
        (
            self.vars[self.layout.fusion_w_v()],
            self.vars[self.layout.fusion_w_t()],
            self.vars[self.layout.fusion_a()],
        )
    }

    pub fn classifier(&self) -> (Var, Var) {
        (self.vars[self.layout.classifier_w()], self.vars[self.layout.classifier_b()])
    }
}
