use std::rc::Rc;

use super::terms::delta;
use super::LayerVars;
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, MultimodalGraph};
use crate::tensor::{Pairs, Tape, Tensor, Var, LEAKY_SLOPE};

/// Both directions of every active edge, grouped temporal, spatial,
/// semantic. Fixed for the duration of one forward pass.
#[derive(Clone, Debug)]
pub struct DirectedPairs {
    /// `(receiver, sender)`
    pub pairs: Pairs,
    /// The underlying edge's stored `(i, j)` for each pair.
    pub oriented: Pairs,
    pub edges: Vec<usize>,
    /// Number of pairs of each kind, in kind order.
    pub counts: [usize; 3],
    /// `δ` of each temporal pair.
    temporal_delta: Vec<f64>,
    num_nodes: usize,
}

fn kind_slot(kind: EdgeKind) -> usize {
    match kind {
        EdgeKind::Temporal => 0,
        EdgeKind::Spatial => 1,
        EdgeKind::Semantic => 2,
    }
}

impl DirectedPairs {
    pub fn new(graph: &MultimodalGraph) -> Self {
        let mut groups: [Vec<(usize, usize, usize)>; 3] = Default::default();
        for (recv, send, e) in graph.directed_pairs() {
            groups[kind_slot(graph.edge(e).kind)].push((recv, send, e));
        }
        let counts = [groups[0].len(), groups[1].len(), groups[2].len()];
        let all: Vec<_> = groups.into_iter().flatten().collect();
        let temporal_delta = all[..counts[0]].iter().map(|&(i, j, _)| delta(graph, i, j)).collect();
        Self {
            pairs: all.iter().map(|&(i, j, _)| (i, j)).collect::<Vec<_>>().into(),
            oriented: all
                .iter()
                .map(|&(_, _, e)| (graph.edge(e).i, graph.edge(e).j))
                .collect::<Vec<_>>()
                .into(),
            edges: all.iter().map(|&(_, _, e)| e).collect(),
            counts,
            temporal_delta,
            num_nodes: graph.num_nodes(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn receivers(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(i, _)| i).collect()
    }

    /// Errors on the first node that receives no message.
    pub fn check_coverage(&self) -> Result<()> {
        let mut seen = vec![false; self.num_nodes];
        for &(i, _) in self.pairs.iter() {
            seen[i] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::IsolatedNode(i)),
            None => Ok(()),
        }
    }

    fn slice(pairs: &Pairs, counts: [usize; 3], slot: usize) -> Pairs {
        let start: usize = counts[..slot].iter().sum();
        Rc::from(&pairs[start..start + counts[slot]])
    }

    /// Per-pair `coeff_kind · {δ, cos(h_i, h_j), σ(h_iᵀ M h_j)}` over the
    /// receiver/sender pairs (`oriented = false`) or the stored edge
    /// orientation (`oriented = true`). Returns a flat vector.
    pub fn edge_terms(&self, tape: &Tape, h: Var, coeff: [Var; 3], m: Var, oriented: bool) -> Result<Var> {
        let src = if oriented { &self.oriented } else { &self.pairs };
        let mut parts = Vec::with_capacity(3);
        if self.counts[0] > 0 {
            let d = tape.constant(Tensor::vector(self.temporal_delta.clone()));
            parts.push(tape.mul_scalar(d, coeff[0])?);
        }
        if self.counts[1] > 0 {
            let c = tape.pair_cosine(h, &Self::slice(src, self.counts, 1))?;
            parts.push(tape.mul_scalar(c, coeff[1])?);
        }
        if self.counts[2] > 0 {
            let hm = tape.matmul(h, m)?;
            let s = tape.pair_dot(hm, h, &Self::slice(src, self.counts, 2))?;
            let s = tape.sigmoid(s);
            parts.push(tape.mul_scalar(s, coeff[2])?);
        }
        if parts.is_empty() {
            return Err(Error::EmptyNeighborhood);
        }
        let joined = tape.concat_cols(&parts)?;
        tape.gather(joined, &(0..self.len()).collect::<Vec<_>>())
    }
}

/// Attention coefficients of one layer.
#[derive(Clone, Debug)]
pub struct Attention {
    /// One value per directed pair of [`DirectedPairs`].
    pub alpha: Var,
    /// `W h` for every node.
    pub projected: Var,
}

/// `α_ij = softmax_{j ∈ N(i)}(LeakyReLU(aᵀ[Wh_i ‖ Wh_j]) + φ(i, j))`.
pub fn gat_attention(tape: &Tape, pairs: &DirectedPairs, h: Var, layer: &LayerVars) -> Result<Attention> {
    pairs.check_coverage()?;
    let z = tape.matmul(h, layer.w)?;
    let d = tape.value(z).rows_cols().1;
    let a_recv = tape.rows(layer.a, &(0..d).collect::<Vec<_>>())?;
    let a_send = tape.rows(layer.a, &(d..2 * d).collect::<Vec<_>>())?;
    let s_recv = tape.matmul(z, a_recv)?;
    let s_send = tape.matmul(z, a_send)?;
    let recv: Vec<usize> = pairs.pairs.iter().map(|&(i, _)| i).collect();
    let send: Vec<usize> = pairs.pairs.iter().map(|&(_, j)| j).collect();
    let e = tape.add(tape.gather(s_recv, &recv)?, tape.gather(s_send, &send)?)?;
    let e = tape.leaky_relu(e, LEAKY_SLOPE);
    let phi = pairs.edge_terms(tape, h, layer.omega, layer.m, false)?;
    let logits = tape.add(e, phi)?;
    let alpha = tape.segment_softmax(logits, &recv)?;
    Ok(Attention { alpha, projected: z })
}

/// `h_i' = ReLU(Σ_j α_ij · W h_j)`, optionally scaling each message by a
/// per-pair edge weight.
pub fn gat_layer(
    tape: &Tape,
    pairs: &DirectedPairs,
    h: Var,
    layer: &LayerVars,
    weights: Option<Var>,
) -> Result<(Var, Attention)> {
    let att = gat_attention(tape, pairs, h, layer)?;
    let coeff = match weights {
        Some(w) => tape.mul(att.alpha, w)?,
        None => att.alpha,
    };
    let n = tape.value(h).rows_cols().0;
    let agg = tape.scatter_rows(coeff, att.projected, &pairs.pairs, n)?;
    Ok((tape.relu(agg), att))
}

fn constant_layer(tape: &Tape, w: &Tensor, a: &Tensor, omega: [f64; 3], m: &Tensor) -> LayerVars {
    LayerVars {
        w: tape.constant(w.clone()),
        a: tape.constant(a.clone()),
        omega: omega.map(|o| tape.constant(Tensor::scalar(o))),
        m: tape.constant(m.clone()),
    }
}

/// `(receiver, sender, α)` for every directed pair, without a caller tape.
pub fn gat_attention_values(
    graph: &MultimodalGraph,
    h: &[Vec<f64>],
    w: &Tensor,
    a: &Tensor,
    omega: [f64; 3],
    m: &Tensor,
) -> Result<Vec<(usize, usize, f64)>> {
    let tape = Tape::new();
    let pairs = DirectedPairs::new(graph);
    let hv = tape.constant(Tensor::from_rows(h)?);
    let att = gat_attention(&tape, &pairs, hv, &constant_layer(&tape, w, a, omega, m))?;
    let alpha = tape.value(att.alpha);
    Ok(pairs
        .pairs
        .iter()
        .zip(alpha.data())
        .map(|(&(i, j), &v)| (i, j, v))
        .collect())
}

/// One layer's output rows, without a caller tape.
pub fn gat_layer_values(
    graph: &MultimodalGraph,
    h: &[Vec<f64>],
    w: &Tensor,
    a: &Tensor,
    omega: [f64; 3],
    m: &Tensor,
) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::new();
    let pairs = DirectedPairs::new(graph);
    let hv = tape.constant(Tensor::from_rows(h)?);
    let (out, _) = gat_layer(&tape, &pairs, hv, &constant_layer(&tape, w, a, omega, m), None)?;
    let out = tape.value(out);
    Ok((0..h.len()).map(|i| out.row(i).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;

    fn star(features: &[[f64; 2]]) -> MultimodalGraph {
        let mut g = MultimodalGraph::new();
        g.add_node(Node::frame(0, vec![1.0, 0.0])).unwrap();
        for (k, f) in features.iter().enumerate() {
            g.add_node(Node::object(0, format!("o{k}"), f.to_vec())).unwrap();
            g.add_edge(EdgeKind::Spatial, 0, k + 1, 1.0).unwrap();
        }
        g
    }

    fn rows(g: &MultimodalGraph) -> Vec<Vec<f64>> {
        g.nodes().iter().map(|n| n.feature.clone()).collect()
    }

    #[test]
    fn single_neighbor_gets_all_attention() {
        let g = star(&[[0.3, -0.8]]);
        let a = Tensor::matrix(4, 1, vec![0.9, -1.3, 2.0, 0.4]).unwrap();
        let alpha = gat_attention_values(&g, &rows(&g), &Tensor::identity(2), &a, [0.3; 3], &Tensor::identity(2)).unwrap();
        assert!(alpha.iter().all(|&(_, _, v)| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn symmetric_neighbors_split_evenly() {
        let g = star(&[[0.5, 0.5], [0.5, 0.5]]);
        let a = Tensor::matrix(4, 1, vec![0.9, -1.3, 2.0, 0.4]).unwrap();
        let alpha = gat_attention_values(&g, &rows(&g), &Tensor::identity(2), &a, [0.3; 3], &Tensor::identity(2)).unwrap();
        for (i, _, v) in alpha {
            if i == 0 {
                assert!((v - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_weights_pass_neighbor_through_relu() {
        let g = star(&[[0.3, -0.8]]);
        let out = gat_layer_values(&g, &rows(&g), &Tensor::identity(2), &Tensor::zeros([4, 1]), [0.0; 3], &Tensor::zeros([2, 2])).unwrap();
        assert_eq!(out[0], vec![0.3, 0.0]);
        assert_eq!(out[1], vec![1.0, 0.0]);
        let zero = gat_layer_values(&g, &rows(&g), &Tensor::zeros([2, 2]), &Tensor::zeros([4, 1]), [0.0; 3], &Tensor::zeros([2, 2])).unwrap();
        assert!(zero.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_node_is_an_error() {
        let mut g = star(&[[0.3, -0.8]]);
        g.add_node(Node::object(0, "lonely", vec![1.0, 1.0])).unwrap();
        let err = gat_attention_values(&g, &rows(&g), &Tensor::identity(2), &Tensor::zeros([4, 1]), [0.0; 3], &Tensor::identity(2));
        assert!(matches!(err, Err(Error::IsolatedNode(2))));
    }
}
