use crate::error::{Error, Result};
use crate::graph::{EdgeKind, MultimodalGraph, NodeKind};
use crate::tensor::{cosine_sim, sigmoid, Tape, Tensor, Var};

/// Values that drive edge refinement and topology adaptation.
#[derive(Clone, Copy, Debug)]
pub struct AdaptView<'a> {
    /// `[λ_temporal, λ_spatial, λ_semantic]`
    pub lambda: [f64; 3],
    pub prune_threshold: f64,
    pub add_threshold: f64,
    /// Bilinear compatibility matrix of the last GAT layer.
    pub m: &'a Tensor,
}

/// 1 iff both nodes are frames one step apart.
pub(crate) fn delta(graph: &MultimodalGraph, i: usize, j: usize) -> f64 {
    let (a, b) = (graph.node(i), graph.node(j));
    let adjacent = a.kind == NodeKind::Frame
        && b.kind == NodeKind::Frame
        && a.frame_index.zip(b.frame_index).is_some_and(|(x, y)| x.abs_diff(y) == 1);
    if adjacent {
        1.0
    } else {
        0.0
    }
}

fn bilinear(h_i: &[f64], m: &Tensor, h_j: &[f64]) -> f64 {
    h_i.iter()
        .enumerate()
        .map(|(r, &x)| x * crate::tensor::dot(m.row(r), h_j))
        .sum()
}

fn edge_term(
    graph: &MultimodalGraph,
    kind: EdgeKind,
    (i, j): (usize, usize),
    h_i: &[f64],
    h_j: &[f64],
    coeff: [f64; 3],
    m: &Tensor,
) -> f64 {
    match kind {
        EdgeKind::Temporal => coeff[0] * delta(graph, i, j),
        EdgeKind::Spatial => coeff[1] * cosine_sim(h_i, h_j, true).unwrap_or(0.0),
        EdgeKind::Semantic => coeff[2] * sigmoid(bilinear(h_i, m, h_j)),
    }
}

/// Attention modulation for the directed pair `i ← j` of an edge of `kind`:
/// `ω_temporal·δ`, `ω_spatial·cos(h_i, h_j)` or `ω_semantic·σ(h_iᵀ M h_j)`.
pub fn phi(
    graph: &MultimodalGraph,
    kind: EdgeKind,
    pair: (usize, usize),
    h_i: &[f64],
    h_j: &[f64],
    omega: [f64; 3],
    m: &Tensor,
) -> f64 {
    edge_term(graph, kind, pair, h_i, h_j, omega, m)
}

/// Edge-weight adjustment, the same case split as [`phi`] with λ.
pub fn psi(
    graph: &MultimodalGraph,
    kind: EdgeKind,
    pair: (usize, usize),
    h_i: &[f64],
    h_j: &[f64],
    adapt: &AdaptView<'_>,
) -> f64 {
    edge_term(graph, kind, pair, h_i, h_j, adapt.lambda, adapt.m)
}

fn refined_weight(graph: &MultimodalGraph, kind: EdgeKind, i: usize, j: usize, h: &[Vec<f64>], adapt: &AdaptView<'_>) -> f64 {
    cosine_sim(&h[i], &h[j], true).unwrap_or(0.0) + psi(graph, kind, (i, j), &h[i], &h[j], adapt)
}

fn check_states(graph: &MultimodalGraph, h: &[Vec<f64>]) -> Result<()> {
    if h.len() != graph.num_nodes() {
        return Err(Error::Shape {
            op: "node states",
            lhs: vec![graph.num_nodes()],
            rhs: vec![h.len()],
        });
    }
    Ok(())
}

/// Sets `w = cos(h_i, h_j) + ψ(i, j)` on every active edge.
pub fn refine_edges(graph: &mut MultimodalGraph, h: &[Vec<f64>], adapt: &AdaptView<'_>) -> Result<()> {
    check_states(graph, h)?;
    for e in 0..graph.edges().len() {
        let edge = graph.edge(e);
        if edge.active {
            let w = refined_weight(graph, edge.kind, edge.i, edge.j, h, adapt);
            graph.set_weight(e, w);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TopologyChange {
    pub pruned: usize,
    pub added: usize,
}

/// Prunes weak edges and links similar same-frame objects and text–visual
/// pairs. Temporal edges are never pruned, and containment, text–frame and
/// fusion edges are restored afterwards so no node is cut off. Edges are
/// re-sorted, so edge indices change.
pub fn adapt_topology(graph: &mut MultimodalGraph, h: &[Vec<f64>], adapt: &AdaptView<'_>) -> Result<TopologyChange> {
    check_states(graph, h)?;
    if !(adapt.prune_threshold < adapt.add_threshold) {
        return Err(Error::InvalidConfig(format!(
            "prune_threshold {} must be below add_threshold {}",
            adapt.prune_threshold, adapt.add_threshold
        )));
    }
    let before: Vec<bool> = graph.edges().iter().map(|e| e.active).collect();

    for e in 0..graph.edges().len() {
        let edge = graph.edge(e);
        if edge.active && edge.kind != EdgeKind::Temporal && edge.weight < adapt.prune_threshold {
            graph.set_active(e, false);
        }
    }

    let mut candidates = Vec::new();
    let objects: Vec<usize> = graph.nodes_of(NodeKind::Object).collect();
    for (k, &a) in objects.iter().enumerate() {
        for &b in &objects[k + 1..] {
            if graph.node(a).frame_index == graph.node(b).frame_index {
                candidates.push((EdgeKind::Spatial, a, b));
            }
        }
    }
    let visual: Vec<usize> = (0..graph.num_nodes())
        .filter(|&i| matches!(graph.node(i).kind, NodeKind::Frame | NodeKind::Object))
        .collect();
    for t in graph.nodes_of(NodeKind::Text).collect::<Vec<_>>() {
        candidates.extend(visual.iter().map(|&v| (EdgeKind::Semantic, v.min(t), v.max(t))));
    }
    let mut added = 0;
    for (kind, a, b) in candidates {
        if cosine_sim(&h[a], &h[b], true).unwrap_or(0.0) < adapt.add_threshold {
            continue;
        }
        let w = refined_weight(graph, kind, a, b, h, adapt);
        match graph.find_edge(kind, a, b) {
            Some(e) => {
                graph.set_active(e, true);
                graph.set_weight(e, w);
            }
            None => {
                graph.add_edge(kind, a, b, w)?;
                added += 1;
            }
        }
    }

    for e in 0..graph.edges().len() {
        if graph.is_floor_edge(e) {
            graph.set_active(e, true);
        }
    }
    let pruned = before
        .iter()
        .zip(graph.edges())
        .filter(|(&was, now)| was && !now.active)
        .count();
    graph.canonicalize();
    Ok(TopologyChange { pruned, added })
}

fn project(m: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    let (r, c) = m.rows_cols();
    if c != x.len() {
        return Err(Error::Shape {
            op: "fuse",
            lhs: vec![r, c],
            rhs: vec![x.len()],
        });
    }
    Ok((0..r).map(|i| crate::tensor::dot(m.row(i), x)).collect())
}

/// `α_v·W_v f_v + α_t·W_t f_t` with `(α_v, α_t)` the softmax of the two
/// scores `aᵀ W_v f_v`, `aᵀ W_t f_t`. Returns the fused vector and the
/// mixing weights.
pub fn fuse(f_v: &[f64], f_t: &[f64], w_v: &Tensor, w_t: &Tensor, a: &Tensor) -> Result<(Vec<f64>, [f64; 2])> {
    let v = project(w_v, f_v)?;
    let t = project(w_t, f_t)?;
    if a.numel() != v.len() || v.len() != t.len() {
        return Err(Error::Shape {
            op: "fuse",
            lhs: vec![v.len(), t.len()],
            rhs: a.shape().to_vec(),
        });
    }
    let (sv, st) = (crate::tensor::dot(a.data(), &v), crate::tensor::dot(a.data(), &t));
    let m = sv.max(st);
    let (ev, et) = ((sv - m).exp(), (st - m).exp());
    let alpha = [ev / (ev + et), et / (ev + et)];
    let fused = v.iter().zip(&t).map(|(x, y)| alpha[0] * x + alpha[1] * y).collect();
    Ok((fused, alpha))
}

/// Tape version of [`fuse`] over `1 × d_V` and `1 × d_T` rows; `a` is `d × 1`.
pub fn fuse_tape(tape: &Tape, f_v: Var, f_t: Var, w_v: Var, w_t: Var, a: Var) -> Result<Var> {
    let wvt = tape.transpose(w_v);
    let wtt = tape.transpose(w_t);
    let v = tape.matmul(f_v, wvt)?;
    let t = tape.matmul(f_t, wtt)?;
    let both = tape.concat_rows(&[v, t])?;
    let scores = tape.matmul(both, a)?;
    let scores = tape.transpose(scores);
    let alpha = tape.softmax_rows(scores);
    tape.matmul(alpha, both)
}
