mod common;

use common::{random_input, random_matrix, random_vec};
use mmgraph::embedding::ObjectFeature;
use mmgraph::graph::{
    build_graph, export_graph, import_graph, initial_edge_weight, temporal_aggregate_values, EdgeKind, GraphConfig,
    GraphInput, NodeKind,
};
use mmgraph::tensor::{SeededRng, Tensor};
use proptest::prelude::*;

fn obj(t: usize, k: usize, feature: Vec<f64>) -> ObjectFeature {
    ObjectFeature {
        frame_index: t,
        region_id: format!("r{k}"),
        feature,
    }
}

fn thresholds(spatial: f64, semantic: f64) -> GraphConfig {
    GraphConfig {
        spatial_threshold: spatial,
        semantic_threshold: semantic,
    }
}

#[test]
fn three_objects_in_one_frame_pair_up_fully() {
    let mut rng = SeededRng::new(3);
    let input = GraphInput {
        frames: vec![random_vec(4, &mut rng)],
        objects: (0..3).map(|k| obj(0, k, random_vec(4, &mut rng))).collect(),
        text: None,
    };
    let g = build_graph(&input, &thresholds(-1.0, 0.3), None).unwrap();
    let pairs = g
        .edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::Spatial && g.node(e.i).kind == NodeKind::Object)
        .count();
    assert_eq!(pairs, 3);
    assert_eq!(g.count_edges(EdgeKind::Spatial, false), 6);
}

#[test]
fn threshold_one_with_noisy_objects_links_none() {
    let mut rng = SeededRng::new(4);
    let base = random_vec(6, &mut rng);
    let noisy = |rng: &mut SeededRng| base.iter().map(|x| x + 0.01 * rng.normal()).collect::<Vec<_>>();
    let input = GraphInput {
        frames: vec![random_vec(6, &mut rng)],
        objects: (0..4).map(|k| obj(0, k, noisy(&mut rng))).collect(),
        text: None,
    };
    for thr in [1.0, 1.5] {
        let g = build_graph(&input, &thresholds(thr, 0.3), None).unwrap();
        assert_eq!(g.count_edges(EdgeKind::Spatial, false), 4, "only containment edges remain");
    }
}

#[test]
fn edge_weight_examples() {
    assert!((initial_edge_weight(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((initial_edge_weight(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() + 1.0).abs() < 1e-15);
    assert!((initial_edge_weight(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
    assert!(initial_edge_weight(&[0.0, 0.0], &[2.0, 1.0]).is_err());
}

#[test]
fn dot_for_episode_without_objects() {
    let mut rng = SeededRng::new(5);
    let input = GraphInput {
        frames: (0..3).map(|_| random_vec(4, &mut rng)).collect(),
        objects: Vec::new(),
        text: Some(random_vec(4, &mut rng)),
    };
    let g = build_graph(&input, &GraphConfig::default(), None).unwrap();
    let dot = export_graph(&g, "dot").unwrap();
    let node_lines = dot.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count();
    assert_eq!(node_lines, 4);
    assert_eq!(dot.matches("shape=box").count(), 3, "{dot}");
}

#[test]
fn two_frames_one_object_each() {
    let mut rng = SeededRng::new(6);
    let input = GraphInput {
        frames: (0..2).map(|_| random_vec(4, &mut rng)).collect(),
        objects: vec![obj(0, 0, random_vec(4, &mut rng)), obj(1, 0, random_vec(4, &mut rng))],
        text: Some(random_vec(4, &mut rng)),
    };
    let g = build_graph(&input, &GraphConfig::default(), None).unwrap();
    let text = &input.text.as_ref().unwrap();
    let linked_objects = input
        .objects
        .iter()
        .filter(|o| initial_edge_weight(text, &o.feature).unwrap() >= 0.3)
        .count();
    assert_eq!(g.count_edges(EdgeKind::Temporal, false), 1);
    assert_eq!(g.count_edges(EdgeKind::Spatial, false), 2);
    assert_eq!(g.count_edges(EdgeKind::Semantic, false), 2 + linked_objects);
    assert_eq!(g.edges().len(), 5 + linked_objects);
}

#[test]
fn structured_export_round_trips_random_graphs() {
    let mut rng = SeededRng::new(7);
    for _ in 0..20 {
        let (g, _) = common::random_graph(&mut rng, 5);
        let text = export_graph(&g, "structured").unwrap();
        assert_eq!(import_graph(&text).unwrap(), g);
        assert_eq!(export_graph(&g, "structured").unwrap(), text);
    }
    let (g, _) = common::random_graph(&mut rng, 5);
    assert!(export_graph(&g, "graphml").is_err());
}

fn naive_self_attention(x: &[Vec<f64>], q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<Vec<f64>> {
    let d = x[0].len();
    let proj = |m: &Tensor| x.iter().map(|r| common::vecmat(r, m)).collect::<Vec<_>>();
    let (qs, ks, vs) = (proj(q), proj(k), proj(v));
    let mut out = Vec::new();
    for i in 0..x.len() {
        let scores: Vec<f64> = ks.iter().map(|kj| common::dot(&qs[i], kj) / (d as f64).sqrt()).collect();
        let mut row = x[i].clone();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for (j, s) in scores.iter().enumerate() {
            for c in 0..d {
                row[c] += s.exp() / z * vs[j][c];
            }
        }
        out.push(row);
    }
    out
}

#[test]
fn temporal_aggregate_matches_naive_attention() {
    let mut rng = SeededRng::new(8);
    for _ in 0..20 {
        let x: Vec<Vec<f64>> = (0..3).map(|_| common::random_vec(4, &mut rng)).collect();
        let (q, k, v) = (
            random_matrix(4, 4, 1.0, &mut rng),
            random_matrix(4, 4, 1.0, &mut rng),
            random_matrix(4, 4, 1.0, &mut rng),
        );
        let got = temporal_aggregate_values(&x, &q, &k, &v).unwrap();
        let want = naive_self_attention(&x, &q, &k, &v);
        assert!(common::max_abs_diff(&got, &want) <= 1e-10);
    }
}

#[test]
fn single_frame_with_zero_projections_is_unchanged() {
    let x = vec![vec![0.3, -1.2, 2.0]];
    let z = Tensor::zeros(vec![3, 3]);
    assert_eq!(temporal_aggregate_values(&x, &z, &z, &z).unwrap(), x);
}

proptest! {
    #[test]
    fn structural_invariants(seed in any::<u64>(), frames in 1usize..7, spatial in -1.2f64..1.2, semantic in -1.2f64..1.2) {
        let mut rng = SeededRng::new(seed);
        let input = random_input(frames, 3, 4, &mut rng);
        let cfg = thresholds(spatial, semantic);
        let g = build_graph(&input, &cfg, None).unwrap();
        g.validate().unwrap();
        prop_assert_eq!(g.count_edges(EdgeKind::Temporal, false), frames - 1);
        prop_assert_eq!(g.count_nodes(NodeKind::Frame), frames);
        prop_assert_eq!(g.count_nodes(NodeKind::Object), input.objects.len());
        prop_assert_eq!(g.count_nodes(NodeKind::Text), 1);
        for o in g.nodes_of(NodeKind::Object).collect::<Vec<_>>() {
            let frame = g.node(o).frame_index.unwrap();
            let containment = g
                .edges()
                .iter()
                .filter(|e| e.kind == EdgeKind::Spatial && (e.i, e.j) == (frame, o))
                .count();
            prop_assert_eq!(containment, 1);
        }
        prop_assert_eq!(g.components(), 1);
        prop_assert_eq!(build_graph(&input, &cfg, None).unwrap(), g);
    }

    #[test]
    fn raising_spatial_threshold_never_adds_edges(seed in any::<u64>(), lo in -1.0f64..1.0, step in 0.0f64..1.0) {
        let mut rng = SeededRng::new(seed);
        let input = random_input(3, 4, 4, &mut rng);
        let count = |thr: f64| {
            build_graph(&input, &thresholds(thr, 0.3), None)
                .unwrap()
                .count_edges(EdgeKind::Spatial, false)
        };
        prop_assert!(count(lo + step) <= count(lo));
    }
}
