use super::gat::{gat_layer, DirectedPairs};
use super::terms::{adapt_topology, fuse_tape, refine_edges};
use super::{ModelConfig, ModelParams, ParamVars, Variant};
use crate::embedding::Episode;
use crate::error::{Error, Result};
use crate::graph::{build_graph, temporal_aggregate, EdgeKind, GraphInput, MultimodalGraph, Node, NodeKind};
use crate::tensor::{cosine_sim, Tape, Tensor, Var};

/// Taped results of one forward pass.
#[derive(Debug)]
pub struct Forward {
    /// `1 × K`
    pub logits: Var,
    /// Topology the layers ran on.
    pub graph: MultimodalGraph,
    /// `H_0 … H_L`, rows in graph node order.
    pub hidden: Vec<Var>,
    /// Attention per layer, aligned with `pairs`.
    pub alpha: Vec<Var>,
    pub pairs: Option<DirectedPairs>,
}

/// Plain-value view of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    pub graph: MultimodalGraph,
    pub hidden: Vec<Vec<Vec<f64>>>,
    /// Per layer, `(receiver, sender, α)`.
    pub attention: Vec<Vec<(usize, usize, f64)>>,
}

impl ForwardTrace {
    fn from_tape(tape: &Tape, fwd: Forward) -> Self {
        let rows = |v: Var| {
            let t = tape.value(v);
            (0..t.rows_cols().0).map(|i| t.row(i).to_vec()).collect::<Vec<_>>()
        };
        let attention = match &fwd.pairs {
            Some(p) => fwd
                .alpha
                .iter()
                .map(|&a| {
                    p.pairs
                        .iter()
                        .zip(tape.value(a).data())
                        .map(|(&(i, j), &v)| (i, j, v))
                        .collect()
                })
                .collect(),
            None => Vec::new(),
        };
        Self {
            logits: tape.value(fwd.logits).data().to_vec(),
            hidden: fwd.hidden.iter().map(|&h| rows(h)).collect(),
            attention,
            graph: fwd.graph,
        }
    }
}

/// Where each node's input row comes from when it is not a constant.
#[derive(Clone, Debug, Default)]
pub struct NodeSources {
    /// Temporally aggregated frames, `T × d_V`, indexed by frame index.
    pub frames: Option<Var>,
    /// The fused vector, `1 × d`.
    pub fusion: Option<Var>,
    /// Raw text feature for readout-level concatenation.
    pub readout_text: Option<Vec<f64>>,
}

/// Features → temporal aggregation → graph → fusion node.
pub fn prepare_graph(
    tape: &Tape,
    params: &ModelParams,
    vars: &ParamVars,
    input: &GraphInput,
    cfg: &ModelConfig,
) -> Result<(MultimodalGraph, NodeSources)> {
    let variant = cfg.variant;
    if variant != Variant::VisualOnly && input.text.is_none() {
        return Err(Error::InvalidConfig(format!("variant {variant} needs a text feature")));
    }
    let x = tape.constant(Tensor::from_rows(&input.frames)?);
    let frames = temporal_aggregate(tape, x, &vars.temporal())?;
    let aggregated: Vec<Vec<f64>> = {
        let v = tape.value(frames);
        (0..input.frames.len()).map(|i| v.row(i).to_vec()).collect()
    };
    let gi = GraphInput {
        frames: aggregated,
        objects: input.objects.clone(),
        text: if variant.has_text_node() { input.text.clone() } else { None },
    };
    let projection = params.projection();
    let mut graph = build_graph(&gi, &cfg.graph, Some(&projection))?;
    let mut sources = NodeSources {
        frames: Some(frames),
        fusion: None,
        readout_text: if variant == Variant::PlusText { input.text.clone() } else { None },
    };

    if variant.has_text_node() {
        let text = input.text.as_ref().expect("checked above");
        let (w_v, w_t, a) = vars.fusion();
        let f_v = tape.mean_rows(frames)?;
        let f_t = tape.constant(Tensor::matrix(1, text.len(), text.clone())?);
        let fused = fuse_tape(tape, f_v, f_t, w_v, w_t, a)?;
        let feature = tape.value(fused).data().to_vec();
        let text_node = graph.nodes_of(NodeKind::Text).next().expect("text node");
        let fusion = graph.add_node(Node::fusion(feature.clone()))?;
        let w = cosine_sim(&feature, &projection.text(text)?, true)?;
        graph.add_edge(EdgeKind::Semantic, text_node, fusion, w)?;
        for t in 0..gi.frames.len() {
            let w = cosine_sim(&feature, &projection.visual(&gi.frames[t])?, true)?;
            graph.add_edge(EdgeKind::Semantic, t, fusion, w)?;
        }
        graph.canonicalize();
        sources.fusion = Some(fused);
    }
    Ok((graph, sources))
}

/// Layer-0 node states: visual nodes through `W_v`, text through `W_t`,
/// fusion as is. Rows follow graph node order.
pub fn initial_states(
    tape: &Tape,
    vars: &ParamVars,
    graph: &MultimodalGraph,
    sources: &NodeSources,
) -> Result<Var> {
    let (w_v, w_t, _) = vars.fusion();
    let n = graph.num_nodes();
    let frame_rows = sources.frames.map(|f| tape.value(f).rows_cols().0).unwrap_or(0);

    let mut visual_const = Vec::new();
    let mut visual_map = Vec::new();
    let mut text_const = Vec::new();
    let mut fusion_const = Vec::new();
    let mut placement = vec![(0u8, 0usize); n];
    for (i, node) in graph.nodes().iter().enumerate() {
        match node.kind {
            NodeKind::Frame if sources.frames.is_some() => {
                let t = node.frame_index.expect("frame index");
                if t >= frame_rows {
                    return Err(Error::IndexOutOfRange(format!("frame {t} of {frame_rows}")));
                }
                placement[i] = (0, visual_map.len());
                visual_map.push(t);
            }
            NodeKind::Frame | NodeKind::Object => {
                placement[i] = (0, visual_map.len());
                visual_map.push(frame_rows + visual_const.len());
                visual_const.push(node.feature.clone());
            }
            NodeKind::Text => {
                placement[i] = (1, text_const.len());
                text_const.push(node.feature.clone());
            }
            NodeKind::Fusion => {
                placement[i] = (2, fusion_const.len());
                fusion_const.push(node.feature.clone());
            }
        }
    }

    let mut blocks = Vec::new();
    let mut offsets = [0usize; 3];
    if !visual_map.is_empty() {
        let mut stack = Vec::new();
        if let Some(f) = sources.frames {
            stack.push(f);
        }
        if !visual_const.is_empty() {
            stack.push(tape.constant(Tensor::from_rows(&visual_const)?));
        }
        let stacked = if stack.len() == 1 { stack[0] } else { tape.concat_rows(&stack)? };
        let picked = tape.rows(stacked, &visual_map)?;
        let wvt = tape.transpose(w_v);
        blocks.push(tape.matmul(picked, wvt)?);
    }
    offsets[1] = visual_map.len();
    if !text_const.is_empty() {
        let t = tape.constant(Tensor::from_rows(&text_const)?);
        let wtt = tape.transpose(w_t);
        blocks.push(tape.matmul(t, wtt)?);
    }
    offsets[2] = offsets[1] + text_const.len();
    if !fusion_const.is_empty() {
        match (sources.fusion, fusion_const.len()) {
            (Some(f), 1) => blocks.push(f),
            (Some(_), _) => return Err(Error::InvalidConfig("more than one fusion node".into())),
            (None, _) => blocks.push(tape.constant(Tensor::from_rows(&fusion_const)?)),
        }
    }
    let all = tape.concat_rows(&blocks)?;
    let order: Vec<usize> = placement.iter().map(|&(b, k)| offsets[b as usize] + k).collect();
    tape.rows(all, &order)
}

fn values(tape: &Tape, v: Var) -> Vec<Vec<f64>> {
    let t = tape.value(v);
    (0..t.rows_cols().0).map(|i| t.row(i).to_vec()).collect()
}

/// Layers, readout and classifier over a prepared graph. `adapt` runs one
/// round of refinement and topology adaptation on `H_0` first.
pub fn run_graph(
    tape: &Tape,
    params: &ModelParams,
    vars: &ParamVars,
    mut graph: MultimodalGraph,
    sources: &NodeSources,
    cfg: &ModelConfig,
    adapt: bool,
) -> Result<Forward> {
    let h0 = initial_states(tape, vars, &graph, sources)?;
    let view = params.adapt_view(cfg);
    let dynamic = cfg.variant.dynamic();
    if adapt && dynamic {
        let h = values(tape, h0);
        refine_edges(&mut graph, &h, &view)?;
        adapt_topology(&mut graph, &h, &view)?;
    }

    let mut hidden = vec![h0];
    let mut alpha = Vec::new();
    let mut pairs = None;
    if cfg.variant.message_passing() {
        let dp = DirectedPairs::new(&graph);
        dp.check_coverage()?;
        let last_m = vars.layer(params.dims.layers - 1).m;
        for l in 0..params.dims.layers {
            let h = *hidden.last().expect("non-empty");
            if dynamic {
                refine_edges(&mut graph, &values(tape, h), &view)?;
            }
            let weights = match (cfg.weighted_messages, dynamic) {
                (false, _) => None,
                (true, true) => {
                    let cos = tape.pair_cosine(h, &dp.oriented)?;
                    let psi = dp.edge_terms(tape, h, vars.lambda(), last_m, true)?;
                    Some(tape.add(cos, psi)?)
                }
                (true, false) => {
                    let w: Vec<f64> = dp.edges.iter().map(|&e| graph.edge(e).weight).collect();
                    Some(tape.constant(Tensor::vector(w)))
                }
            };
            let (next, att) = gat_layer(tape, &dp, h, &vars.layer(l), weights)?;
            hidden.push(next);
            alpha.push(att.alpha);
        }
        pairs = Some(dp);
    } else {
        for l in 0..params.dims.layers {
            let h = *hidden.last().expect("non-empty");
            let z = tape.matmul(h, vars.layer(l).w)?;
            hidden.push(tape.relu(z));
        }
    }

    let mut readout = tape.mean_rows(*hidden.last().expect("non-empty"))?;
    if cfg.variant == Variant::PlusText {
        let text = sources
            .readout_text
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("plus_text readout needs a text feature".into()))?;
        let (_, w_t, _) = vars.fusion();
        let t = tape.constant(Tensor::matrix(1, text.len(), text.clone())?);
        let wtt = tape.transpose(w_t);
        let t = tape.matmul(t, wtt)?;
        readout = tape.concat_cols(&[readout, t])?;
    }
    let (w_c, b_c) = vars.classifier();
    let logits = tape.matmul(readout, w_c)?;
    let logits = tape.add(logits, b_c)?;
    Ok(Forward {
        logits,
        graph,
        hidden,
        alpha,
        pairs,
    })
}

/// The whole pipeline on a tape, for training.
pub fn forward_tape(
    tape: &Tape,
    params: &ModelParams,
    vars: &ParamVars,
    input: &GraphInput,
    cfg: &ModelConfig,
) -> Result<Forward> {
    check_compatible(params, cfg, input)?;
    let (graph, sources) = prepare_graph(tape, params, vars, input, cfg)?;
    run_graph(tape, params, vars, graph, &sources, cfg, true)
}

fn check_compatible(params: &ModelParams, cfg: &ModelConfig, input: &GraphInput) -> Result<()> {
    cfg.validate()?;
    if params.variant != cfg.variant {
        return Err(Error::InvalidConfig(format!(
            "parameters were built for {}, not {}",
            params.variant, cfg.variant
        )));
    }
    let dv = params.dims.visual_dim;
    let bad_visual = input
        .frames
        .iter()
        .chain(input.objects.iter().map(|o| &o.feature))
        .find(|f| f.len() != dv);
    if let Some(f) = bad_visual {
        return Err(Error::Shape {
            op: "visual feature",
            lhs: vec![dv],
            rhs: vec![f.len()],
        });
    }
    if let Some(t) = &input.text {
        if t.len() != params.dims.text_dim {
            return Err(Error::Shape {
                op: "text feature",
                lhs: vec![params.dims.text_dim],
                rhs: vec![t.len()],
            });
        }
    }
    Ok(())
}

/// Logits, final graph, node states and attention for one episode.
pub fn forward(episode: &Episode, params: &ModelParams, cfg: &ModelConfig) -> Result<ForwardTrace> {
    let input = GraphInput::from_episode(episode)?;
    let tape = Tape::new();
    let vars = params.bind_constant(&tape);
    let fwd = forward_tape(&tape, params, &vars, &input, cfg)?;
    Ok(ForwardTrace::from_tape(&tape, fwd))
}

/// Layers and readout over a given graph, taking node features as
/// constants and leaving the topology as it is.
pub fn forward_graph(
    graph: &MultimodalGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
    readout_text: Option<&[f64]>,
) -> Result<ForwardTrace> {
    cfg.validate()?;
    let tape = Tape::new();
    let vars = params.bind_constant(&tape);
    let sources = NodeSources {
        readout_text: readout_text.map(<[f64]>::to_vec),
        ..NodeSources::default()
    };
    let fwd = run_graph(&tape, params, &vars, graph.clone(), &sources, cfg, false)?;
    Ok(ForwardTrace::from_tape(&tape, fwd))
}
