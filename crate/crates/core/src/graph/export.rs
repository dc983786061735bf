//! Text renderings of a graph.
//!
//! `dot` is Graphviz input for inspection. `structured` is JSON:
//!
//! ```json
//! { "format": "mmgraph-graph-v1",
//!   "nodes": [ { "kind": "frame", "feature": [..], "frame_index": 0 }, .. ],
//!   "edges": [ { "kind": "temporal", "i": 0, "j": 1, "weight": 0.9, "active": true }, .. ] }
//! ```
//!
//! Both list nodes sorted by kind (frame, object, text, fusion) and then by
//! index, and edges by `(kind, i, j)` over the renumbered nodes.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeKind, MultimodalGraph, Node, NodeKind};
use crate::error::{Error, Result};

pub const GRAPH_FORMAT: &str = "mmgraph-graph-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Structured,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "structured" | "json" => Ok(Self::Structured),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    format: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

fn ordered(graph: &MultimodalGraph) -> (Vec<Node>, Vec<Edge>) {
    let mut order: Vec<usize> = (0..graph.num_nodes()).collect();
    order.sort_by_key(|&i| (graph.node(i).kind, i));
    let mut rank = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let nodes = order.iter().map(|&i| graph.node(i).clone()).collect();
    let mut edges: Vec<Edge> = graph
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = (rank[e.i], rank[e.j]);
            Edge {
                i: a.min(b),
                j: a.max(b),
                ..e.clone()
            }
        })
        .collect();
    edges.sort_by_key(|e| (e.kind, e.i, e.j));
    (nodes, edges)
}

/// Renders `graph` as `"dot"` or `"structured"` (alias `"json"`).
pub fn export_graph(graph: &MultimodalGraph, format: &str) -> Result<String> {
    let format: GraphFormat = format.parse()?;
    graph.validate()?;
    let (nodes, edges) = ordered(graph);
    match format {
        GraphFormat::Structured => {
            let doc = GraphDocument {
                format: GRAPH_FORMAT.to_string(),
                nodes,
                edges,
            };
            let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
            s.push('\n');
            Ok(s)
        }
        GraphFormat::Dot => Ok(dot(&nodes, &edges)),
    }
}

fn node_label(n: &Node) -> String {
    match n.kind {
        NodeKind::Frame => format!("frame {}", n.frame_index.unwrap_or_default()),
        NodeKind::Object => format!(
            "{} @{}",
            n.region_id.as_deref().unwrap_or("object"),
            n.frame_index.unwrap_or_default()
        ),
        NodeKind::Text => "text".to_string(),
        NodeKind::Fusion => "fusion".to_string(),
    }
}

fn dot(nodes: &[Node], edges: &[Edge]) -> String {
    let mut s = String::from("digraph mmgraph {\n  rankdir=LR;\n");
    for (i, n) in nodes.iter().enumerate() {
        let shape = match n.kind {
            NodeKind::Frame => "box",
            NodeKind::Object => "ellipse",
            NodeKind::Text => "note",
            NodeKind::Fusion => "diamond",
        };
        let _ = writeln!(s, "  n{i} [label=\"{}\", shape={shape}];", node_label(n));
    }
    for e in edges {
        let (ki, kj) = (nodes[e.i].kind, nodes[e.j].kind);
        // Arrows run forward in time, from frames into their objects, and
        // from visual nodes into text and fusion.
        let (from, to, dir) = match e.kind {
            EdgeKind::Temporal => {
                if nodes[e.i].frame_index < nodes[e.j].frame_index {
                    (e.i, e.j, "forward")
                } else {
                    (e.j, e.i, "forward")
                }
            }
            EdgeKind::Spatial if ki == kj => (e.i, e.j, "none"),
            EdgeKind::Spatial if ki == NodeKind::Frame => (e.i, e.j, "forward"),
            EdgeKind::Spatial => (e.j, e.i, "forward"),
            EdgeKind::Semantic if kj == NodeKind::Fusion || (kj == NodeKind::Text && ki != NodeKind::Fusion) => {
                (e.i, e.j, "forward")
            }
            EdgeKind::Semantic => (e.j, e.i, "forward"),
        };
        let (color, style) = match (e.active, e.kind) {
            (false, _) => ("gray70", "dotted"),
            (true, EdgeKind::Temporal) => ("blue", "bold"),
            (true, EdgeKind::Spatial) => ("darkgreen", "solid"),
            (true, EdgeKind::Semantic) => ("darkorange", "dashed"),
        };
        let kind = match e.kind {
            EdgeKind::Temporal => "temporal",
            EdgeKind::Spatial => "spatial",
            EdgeKind::Semantic => "semantic",
        };
        let _ = writeln!(
            s,
            "  n{from} -> n{to} [label=\"{:.3}\", kind={kind}, color={color}, style={style}, dir={dir}];",
            e.weight
        );
    }
    s.push_str("}\n");
    s
}

/// Parses a `structured` export back into a graph.
pub fn import_graph(text: &str) -> Result<MultimodalGraph> {
    let doc: GraphDocument = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    if doc.format != GRAPH_FORMAT {
        return Err(Error::UnknownFormat(doc.format));
    }
    let mut g = MultimodalGraph::new();
    for n in doc.nodes {
        g.add_node(n)?;
    }
    for e in doc.edges {
        let id = g.add_edge(e.kind, e.i, e.j, e.weight)?;
        g.set_active(id, e.active);
    }
    g.canonicalize();
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MultimodalGraph {
        let mut g = MultimodalGraph::new();
        g.add_node(Node::frame(0, vec![1.0, 0.0])).unwrap();
        g.add_node(Node::frame(1, vec![0.5, 0.5])).unwrap();
        g.add_node(Node::object(1, "hand", vec![0.25, 1.0])).unwrap();
        g.add_node(Node::text(vec![0.1, 0.2, 0.3])).unwrap();
        g.add_edge(EdgeKind::Temporal, 0, 1, 0.7071).unwrap();
        g.add_edge(EdgeKind::Spatial, 1, 2, 0.8).unwrap();
        let e = g.add_edge(EdgeKind::Semantic, 0, 3, 0.1).unwrap();
        g.add_edge(EdgeKind::Semantic, 1, 3, 0.2).unwrap();
        g.set_active(e, false);
        g.canonicalize();
        g
    }

    #[test]
    fn structured_round_trip() {
        let g = sample();
        let text = export_graph(&g, "structured").unwrap();
        assert_eq!(import_graph(&text).unwrap(), g);
        assert_eq!(export_graph(&import_graph(&text).unwrap(), "json").unwrap(), text);
    }

    #[test]
    fn dot_lists_every_node_and_edge() {
        let text = export_graph(&sample(), "dot").unwrap();
        assert!(text.starts_with("digraph"));
        assert_eq!(text.matches("shape=").count(), 4);
        assert_eq!(text.matches(" -> ").count(), 4);
        assert!(text.contains("n1 -> n2") && text.contains("n1 -> n3"), "{text}");
        assert!(text.contains("style=dotted"));
    }

    #[test]
    fn unknown_format_and_bad_documents() {
        assert!(matches!(export_graph(&sample(), "png"), Err(Error::UnknownFormat(_))));
        assert!(matches!(import_graph("{"), Err(Error::Malformed(_))));
        let text = export_graph(&sample(), "structured").unwrap().replace(GRAPH_FORMAT, "other");
        assert!(import_graph(&text).is_err());
    }
}
