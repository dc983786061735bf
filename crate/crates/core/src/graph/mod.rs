//! Typed multimodal graphs.
//!
//! Nodes are frames, objects, the annotation text and (once the model adds
//! it) a fusion node. Edges are undirected and typed:
//!
//! * temporal: consecutive frames, always present and never pruned;
//! * spatial: frame → contained object, plus object ↔ object within a frame
//!   when their features are similar enough;
//! * semantic: text ↔ every frame, text ↔ object when the shared-space
//!   projections agree, and fusion ↔ text/frames.
//!
//! Edges are deactivated rather than deleted when pruned, so an edge index
//! stays meaningful until the next [`MultimodalGraph::canonicalize`].

mod build;
mod export;
mod temporal;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{build_graph, initial_edge_weight, GraphConfig, GraphInput, SharedProjection};
pub use export::{export_graph, import_graph, GraphFormat};
pub use temporal::{temporal_aggregate, temporal_aggregate_values, TemporalVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Frame,
    Object,
    Text,
    Fusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_id: Option<String>,
}

impl Node {
    pub fn frame(t: usize, feature: Vec<f64>) -> Self {
        Self {
            kind: NodeKind::Frame,
            feature,
            frame_index: Some(t),
            region_id: None,
        }
    }

    pub fn object(t: usize, region_id: impl Into<String>, feature: Vec<f64>) -> Self {
        Self {
            kind: NodeKind::Object,
            feature,
            frame_index: Some(t),
            region_id: Some(region_id.into()),
        }
    }

    pub fn text(feature: Vec<f64>) -> Self {
        Self {
            kind: NodeKind::Text,
            feature,
            frame_index: None,
            region_id: None,
        }
    }

    pub fn fusion(feature: Vec<f64>) -> Self {
        Self {
            kind: NodeKind::Fusion,
            feature,
            frame_index: None,
            region_id: None,
        }
    }

    fn check(&self) -> Result<()> {
        let has_frame = self.frame_index.is_some();
        let wants_frame = matches!(self.kind, NodeKind::Frame | NodeKind::Object);
        if has_frame != wants_frame {
            return Err(Error::InvalidConfig(format!(
                "{:?} node {} a frame index",
                self.kind,
                if wants_frame { "needs" } else { "cannot carry" }
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Temporal,
    Spatial,
    Semantic,
}

/// Undirected edge with `i < j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    pub active: bool,
}

#[derive(Clone, Debug, Default)]
pub struct MultimodalGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    /// Per node, indices of every incident edge (active or not).
    incident: Vec<Vec<usize>>,
}

impl PartialEq for MultimodalGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

impl MultimodalGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: Node) -> Result<usize> {
        node.check()?;
        self.nodes.push(node);
        self.incident.push(Vec::new());
        Ok(self.nodes.len() - 1)
    }

    /// Adds an active edge after checking the kind's endpoint rules.
    pub fn add_edge(&mut self, kind: EdgeKind, a: usize, b: usize, weight: f64) -> Result<usize> {
        let (i, j) = (a.min(b), a.max(b));
        if j >= self.nodes.len() {
            return Err(Error::IndexOutOfRange(format!("edge ({a}, {b}) with {} nodes", self.nodes.len())));
        }
        if i == j {
            return Err(Error::InvalidConfig(format!("self-loop on node {i}")));
        }
        self.check_edge_kind(kind, i, j)?;
        if self.find_edge(kind, i, j).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate {kind:?} edge ({i}, {j})")));
        }
        self.edges.push(Edge {
            kind,
            i,
            j,
            weight,
            active: true,
        });
        let e = self.edges.len() - 1;
        self.incident[i].push(e);
        self.incident[j].push(e);
        Ok(e)
    }

    fn check_edge_kind(&self, kind: EdgeKind, i: usize, j: usize) -> Result<()> {
        use NodeKind::*;
        let (ni, nj) = (&self.nodes[i], &self.nodes[j]);
        let ok = match kind {
            EdgeKind::Temporal => {
                ni.kind == Frame
                    && nj.kind == Frame
                    && ni.frame_index.zip(nj.frame_index).is_some_and(|(a, b)| a.abs_diff(b) == 1)
            }
            EdgeKind::Spatial => {
                let kinds = (ni.kind, nj.kind);
                matches!(kinds, (Frame, Object) | (Object, Frame) | (Object, Object))
                    && ni.frame_index == nj.frame_index
            }
            EdgeKind::Semantic => {
                matches!(ni.kind, Text | Fusion) || matches!(nj.kind, Text | Fusion)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "{kind:?} edge cannot join {:?} {i} and {:?} {j}",
                ni.kind, nj.kind
            )))
        }
    }

    pub fn find_edge(&self, kind: EdgeKind, a: usize, b: usize) -> Option<usize> {
        let (i, j) = (a.min(b), a.max(b));
        self.incident
            .get(i)?
            .iter()
            .copied()
            .find(|&e| self.edges[e].kind == kind && self.edges[e].i == i && self.edges[e].j == j)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn set_active(&mut self, e: usize, active: bool) {
        self.edges[e].active = active;
    }

    pub fn set_weight(&mut self, e: usize, weight: f64) {
        self.edges[e].weight = weight;
    }

    pub fn incident_edges(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    /// `(edge, neighbor)` for every active edge at `i`.
    pub fn active_neighbors(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.incident[i].iter().filter_map(move |&e| {
            let edge = &self.edges[e];
            edge.active.then(|| (e, if edge.i == i { edge.j } else { edge.i }))
        })
    }

    /// `(receiver, sender, edge)` in both directions for every active edge.
    pub fn directed_pairs(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.edges.len() * 2);
        for (e, edge) in self.edges.iter().enumerate() {
            if edge.active {
                out.push((edge.i, edge.j, e));
                out.push((edge.j, edge.i, e));
            }
        }
        out
    }

    pub fn count_edges(&self, kind: EdgeKind, active_only: bool) -> usize {
        self.edges
            .iter()
            .filter(|e| e.kind == kind && (e.active || !active_only))
            .count()
    }

    pub fn count_nodes(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.kind == kind)
            .map(|(i, _)| i)
    }

    /// Edges that keep every node reachable: frame → object containment,
    /// text ↔ frame links, and every edge touching the fusion node.
    pub fn is_floor_edge(&self, e: usize) -> bool {
        use NodeKind::*;
        let edge = &self.edges[e];
        let kinds = (self.nodes[edge.i].kind, self.nodes[edge.j].kind);
        match edge.kind {
            EdgeKind::Temporal => false,
            EdgeKind::Spatial => matches!(kinds, (Frame, Object) | (Object, Frame)),
            EdgeKind::Semantic => {
                matches!(kinds, (Frame, Text) | (Text, Frame)) || kinds.0 == Fusion || kinds.1 == Fusion
            }
        }
    }

    /// Number of connected components over active edges.
    pub fn components(&self) -> usize {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for (_, w) in self.active_neighbors(v) {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        count
    }

    /// Physically deletes an edge; later edge indices shift down by one.
    pub fn remove_edge(&mut self, e: usize) {
        self.edges.remove(e);
        self.rebuild_incidence();
    }

    /// Sorts edges by `(kind, i, j)`. Edge indices change.
    pub fn canonicalize(&mut self) {
        self.edges.sort_by_key(|e| (e.kind, e.i, e.j));
        self.rebuild_incidence();
    }

    fn rebuild_incidence(&mut self) {
        self.incident = vec![Vec::new(); self.nodes.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            self.incident[edge.i].push(e);
            self.incident[edge.j].push(e);
        }
    }

    /// Relabels nodes so that old node `k` becomes node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.nodes.len();
        let distinct: BTreeSet<usize> = perm.iter().copied().collect();
        if perm.len() != n || distinct.len() != n || distinct.iter().any(|&p| p >= n) {
            return Err(Error::InvalidConfig("node permutation is not a bijection".into()));
        }
        let mut nodes = vec![None; n];
        for (old, &new) in perm.iter().enumerate() {
            nodes[new] = Some(self.nodes[old].clone());
        }
        let mut g = Self {
            nodes: nodes.into_iter().map(|n| n.expect("bijection")).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| {
                    let (a, b) = (perm[e.i], perm[e.j]);
                    Edge {
                        i: a.min(b),
                        j: a.max(b),
                        ..e.clone()
                    }
                })
                .collect(),
            incident: Vec::new(),
        };
        g.canonicalize();
        Ok(g)
    }

    /// Checks incidence bookkeeping, edge endpoint rules and uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (e, edge) in self.edges.iter().enumerate() {
            if edge.i >= edge.j || edge.j >= self.nodes.len() {
                return Err(Error::InvalidConfig(format!("edge {e} has endpoints ({}, {})", edge.i, edge.j)));
            }
            self.check_edge_kind(edge.kind, edge.i, edge.j)?;
            if !seen.insert((edge.kind, edge.i, edge.j)) {
                return Err(Error::InvalidConfig(format!("duplicate edge {e}")));
            }
            if !self.incident[edge.i].contains(&e) || !self.incident[edge.j].contains(&e) {
                return Err(Error::InvalidConfig(format!("edge {e} missing from incidence")));
            }
        }
        for n in &self.nodes {
            n.check()?;
        }
        let listed: usize = self.incident.iter().map(Vec::len).sum();
        if listed != 2 * self.edges.len() {
            return Err(Error::InvalidConfig("stale incidence entries".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_frames() -> MultimodalGraph {
        let mut g = MultimodalGraph::new();
        g.add_node(Node::frame(0, vec![1.0, 0.0])).unwrap();
        g.add_node(Node::frame(1, vec![0.0, 1.0])).unwrap();
        g.add_node(Node::object(0, "a", vec![1.0, 1.0])).unwrap();
        g.add_node(Node::object(1, "a", vec![1.0, 1.0])).unwrap();
        g.add_node(Node::text(vec![1.0, 2.0])).unwrap();
        g
    }

    #[test]
    fn edge_kind_rules() {
        let mut g = two_frames();
        assert!(g.add_edge(EdgeKind::Temporal, 0, 1, 0.0).is_ok());
        assert!(g.add_edge(EdgeKind::Temporal, 0, 2, 0.0).is_err());
        assert!(g.add_edge(EdgeKind::Spatial, 0, 2, 0.0).is_ok());
        assert!(g.add_edge(EdgeKind::Spatial, 0, 3, 0.0).is_err());
        assert!(g.add_edge(EdgeKind::Spatial, 2, 3, 0.0).is_err());
        assert!(g.add_edge(EdgeKind::Semantic, 4, 3, 0.0).is_ok());
        assert!(g.add_edge(EdgeKind::Semantic, 0, 1, 0.0).is_err());
        assert!(g.add_edge(EdgeKind::Semantic, 3, 4, 0.0).is_err(), "duplicate");
        assert!(g.add_edge(EdgeKind::Semantic, 4, 4, 0.0).is_err(), "self-loop");
        g.validate().unwrap();
    }

    #[test]
    fn node_frame_index_rules() {
        let mut g = MultimodalGraph::new();
        let mut bad = Node::text(vec![1.0]);
        bad.frame_index = Some(0);
        assert!(g.add_node(bad).is_err());
        let mut bad = Node::frame(0, vec![1.0]);
        bad.frame_index = None;
        assert!(g.add_node(bad).is_err());
    }

    #[test]
    fn deactivation_hides_neighbors() {
        let mut g = two_frames();
        let e = g.add_edge(EdgeKind::Temporal, 0, 1, 0.5).unwrap();
        assert_eq!(g.active_neighbors(0).count(), 1);
        g.set_active(e, false);
        assert_eq!(g.active_neighbors(0).count(), 0);
        assert!(g.directed_pairs().is_empty());
        assert_eq!(g.components(), 5);
    }

    #[test]
    fn permutation_preserves_structure() {
        let mut g = two_frames();
        g.add_edge(EdgeKind::Temporal, 0, 1, 0.5).unwrap();
        g.add_edge(EdgeKind::Spatial, 1, 3, 0.2).unwrap();
        g.add_edge(EdgeKind::Semantic, 4, 0, 0.1).unwrap();
        let p = g.permuted(&[4, 3, 2, 1, 0]).unwrap();
        p.validate().unwrap();
        assert_eq!(p.node(0), g.node(4));
        assert!(p.find_edge(EdgeKind::Spatial, 3, 1).is_some());
        let back = p.permuted(&[4, 3, 2, 1, 0]).unwrap();
        let mut canon = g.clone();
        canon.canonicalize();
        assert_eq!(back, canon);
        assert!(g.permuted(&[0, 0, 1, 2, 3]).is_err());
    }
}
