mod common;

use common::{attention_oracle, layer_oracle, max_abs_diff, random_graph, random_matrix, vanilla_gat};
use mmgraph::embedding::{synth_dataset, Episode, SynthConfig};
use mmgraph::graph::{EdgeKind, MultimodalGraph};
use mmgraph::model::{
    adapt_topology, forward, forward_graph, fuse, gat_attention_values, gat_layer_values, refine_edges, AdaptView,
    ModelConfig, ModelDims, ModelParams, Variant,
};
use mmgraph::tensor::{SeededRng, Tensor};
use proptest::prelude::*;

fn episodes(seed: u64) -> Vec<Episode> {
    synth_dataset(&SynthConfig {
        num_classes: 3,
        episodes_per_class: 2,
        frames: 4,
        patches: 8,
        objects_per_frame: 2,
        visual_dim: 6,
        text_dim: 5,
        noise_std: 0.2,
        seed,
    })
    .unwrap()
}

fn params(variant: Variant, seed: u64) -> ModelParams {
    let dims = ModelDims {
        hidden: 7,
        ..ModelDims::new(6, 5, 3)
    };
    ModelParams::init(&dims, variant, seed).unwrap()
}

fn config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        ..ModelConfig::default()
    }
}

fn set_scalars(p: &mut ModelParams, prefix: &str, value: f64) {
    let names: Vec<String> = p
        .params()
        .iter()
        .filter(|q| q.name.contains(prefix))
        .map(|q| q.name.clone())
        .collect();
    for n in names {
        p.get_mut(&n).unwrap().data_mut()[0] = value;
    }
}

#[test]
fn attention_matches_enumeration_oracle() {
    let mut rng = SeededRng::new(21);
    for _ in 0..50 {
        let (g, h) = random_graph(&mut rng, 4);
        let w = random_matrix(4, 4, 1.0, &mut rng);
        let a = random_matrix(8, 1, 1.0, &mut rng);
        let m = random_matrix(4, 4, 1.0, &mut rng);
        let omega = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
        let want = attention_oracle(&g, &h, &w, &a, omega, &m);
        let got = gat_attention_values(&g, &h, &w, &a, omega, &m).unwrap();
        let mut dense = vec![vec![0.0; h.len()]; h.len()];
        for (i, j, alpha) in got {
            dense[i][j] += alpha;
        }
        assert!(max_abs_diff(&dense, &want) <= 1e-10);
    }
}

#[test]
fn layer_matches_dense_oracle() {
    let mut rng = SeededRng::new(22);
    for _ in 0..50 {
        let (g, h) = random_graph(&mut rng, 5);
        let w = random_matrix(5, 5, 1.0, &mut rng);
        let a = random_matrix(10, 1, 1.0, &mut rng);
        let m = random_matrix(5, 5, 1.0, &mut rng);
        let omega = [0.7, -0.3, 0.4];
        let got = gat_layer_values(&g, &h, &w, &a, omega, &m).unwrap();
        assert!(max_abs_diff(&got, &layer_oracle(&g, &h, &w, &a, omega, &m)) <= 1e-10);
    }
}

#[test]
fn zero_modulation_is_vanilla_gat() {
    let mut rng = SeededRng::new(23);
    for _ in 0..30 {
        let (g, h) = random_graph(&mut rng, 4);
        let w = random_matrix(4, 4, 1.0, &mut rng);
        let a = random_matrix(8, 1, 1.0, &mut rng);
        let m = random_matrix(4, 4, 1.0, &mut rng);
        let adjacency: Vec<Vec<usize>> = (0..h.len())
            .map(|i| common::neighbors(&g, i).into_iter().map(|(j, _)| j).collect())
            .collect();
        let got = gat_layer_values(&g, &h, &w, &a, [0.0; 3], &m).unwrap();
        assert!(max_abs_diff(&got, &vanilla_gat(&adjacency, &h, &w, &a)) <= 1e-10);
    }
}

#[test]
fn phi_and_psi_zero_reduce_full_model_layers() {
    for ep in episodes(3).iter().take(3) {
        let mut p = params(Variant::Full, 4);
        set_scalars(&mut p, "omega", 0.0);
        set_scalars(&mut p, "lambda", 0.0);
        let cfg = config(Variant::Full);
        let trace = forward(ep, &p, &cfg).unwrap();
        let again = forward_graph(&trace.graph, &p, &cfg, None).unwrap();
        let g = &again.graph;
        let adjacency: Vec<Vec<usize>> = (0..g.num_nodes())
            .map(|i| common::neighbors(g, i).into_iter().map(|(j, _)| j).collect())
            .collect();
        for l in 0..p.dims.layers {
            let w = p.get(&format!("gat.{l}.w")).unwrap();
            let a = p.get(&format!("gat.{l}.a")).unwrap();
            let want = vanilla_gat(&adjacency, &again.hidden[l], w, a);
            assert!(want.iter().flatten().any(|&x| x > 0.0));
            assert!(max_abs_diff(&again.hidden[l + 1], &want) <= 1e-10);
        }
        let h0 = &again.hidden[0];
        let view = AdaptView {
            lambda: [0.0; 3],
            prune_threshold: 0.1,
            add_threshold: 0.8,
            m: p.final_m(),
        };
        let mut refined = g.clone();
        refine_edges(&mut refined, h0, &view).unwrap();
        for e in refined.edges().iter().filter(|e| e.active) {
            assert!((e.weight - common::cos(&h0[e.i], &h0[e.j])).abs() <= 1e-12);
        }
    }
}

#[test]
fn refine_matches_elementwise_recomputation() {
    let mut rng = SeededRng::new(24);
    let m = random_matrix(4, 4, 1.0, &mut rng);
    let view = AdaptView {
        lambda: [0.3, -0.2, 0.6],
        prune_threshold: 0.1,
        add_threshold: 0.8,
        m: &m,
    };
    for _ in 0..20 {
        let (mut g, h) = random_graph(&mut rng, 4);
        refine_edges(&mut g, &h, &view).unwrap();
        for e in g.edges() {
            let psi = common::phi_oracle(&g, e.kind, e.i, e.j, &h, view.lambda, &m);
            assert!((e.weight - (common::cos(&h[e.i], &h[e.j]) + psi)).abs() <= 1e-12);
        }
    }
}

fn pick_removable(g: &MultimodalGraph) -> Option<usize> {
    (0..g.edges().len()).find(|&e| g.edge(e).active && !g.is_floor_edge(e) && g.edge(e).kind != EdgeKind::Temporal)
}

#[test]
fn deactivated_edge_equals_deleted_edge() {
    let mut checked = 0;
    for (k, ep) in episodes(5).iter().enumerate() {
        for weighted in [false, true] {
            for variant in [Variant::StaticGraph, Variant::Full] {
                let p = params(variant, 10 + k as u64);
                let cfg = ModelConfig {
                    weighted_messages: weighted,
                    ..config(variant)
                };
                let g = forward(ep, &p, &cfg).unwrap().graph;
                let Some(e) = pick_removable(&g) else { continue };
                let mut off = g.clone();
                off.set_active(e, false);
                let mut gone = g.clone();
                gone.remove_edge(e);
                let a = forward_graph(&off, &p, &cfg, None).unwrap();
                let b = forward_graph(&gone, &p, &cfg, None).unwrap();
                let diff = a.logits.iter().zip(&b.logits).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(diff <= 1e-12, "{diff}");
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn node_permutation_leaves_logits_unchanged() {
    let mut rng = SeededRng::new(25);
    for variant in Variant::ALL {
        let p = params(variant, 31);
        let cfg = config(variant);
        for ep in episodes(6).iter().take(4) {
            let trace = forward(ep, &p, &cfg).unwrap();
            let text = ep.text_feature();
            let readout = (variant == Variant::PlusText).then_some(text.as_slice());
            let base = forward_graph(&trace.graph, &p, &cfg, readout).unwrap();
            let mut perm: Vec<usize> = (0..trace.graph.num_nodes()).collect();
            rng.shuffle(&mut perm);
            let permuted = trace.graph.permuted(&perm).unwrap();
            let other = forward_graph(&permuted, &p, &cfg, readout).unwrap();
            for (x, y) in base.logits.iter().zip(&other.logits) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn classifier_head_examples() {
    let ep = &episodes(7)[0];
    let cfg = config(Variant::Full);
    let mut p = params(Variant::Full, 3);
    p.get_mut("classifier.w").unwrap().data_mut().fill(0.0);
    p.get_mut("classifier.b").unwrap().data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
    assert_eq!(forward(ep, &p, &cfg).unwrap().logits, vec![0.5, -1.0, 2.0]);

    let p = params(Variant::Full, 3);
    let base = forward(ep, &p, &cfg).unwrap().logits;
    let mut swapped = p.clone();
    let w = p.get("classifier.w").unwrap().clone();
    let (rows, k) = w.rows_cols();
    let perm = [2, 0, 1];
    let sw = swapped.get_mut("classifier.w").unwrap().data_mut();
    for r in 0..rows {
        for c in 0..k {
            sw[r * k + perm[c]] = w.data()[r * k + c];
        }
    }
    let out = forward(ep, &swapped, &cfg).unwrap().logits;
    for c in 0..k {
        assert!((out[perm[c]] - base[c]).abs() < 1e-12);
    }
}

#[test]
fn fuse_with_zero_attention_is_the_midpoint() {
    let mut rng = SeededRng::new(26);
    let w_v = random_matrix(3, 4, 1.0, &mut rng);
    let w_t = random_matrix(3, 2, 1.0, &mut rng);
    let f_v = common::random_vec(4, &mut rng);
    let f_t = common::random_vec(2, &mut rng);
    let (fused, mix) = fuse(&f_v, &f_t, &w_v, &w_t, &Tensor::zeros(vec![3, 1])).unwrap();
    assert_eq!(mix, [0.5, 0.5]);
    let pv = common::vecmat(&f_v, &common::transpose(&w_v));
    let pt = common::vecmat(&f_t, &common::transpose(&w_t));
    for c in 0..3 {
        assert!((fused[c] - 0.5 * (pv[c] + pt[c])).abs() < 1e-12);
    }
}

#[test]
fn variants_shape_the_graph() {
    let ep = &episodes(8)[0];
    for variant in Variant::ALL {
        let trace = forward(ep, &params(variant, 1), &config(variant)).unwrap();
        let kinds = |k| trace.graph.count_nodes(k);
        use mmgraph::graph::NodeKind::*;
        assert_eq!(kinds(Frame), 4);
        assert_eq!(kinds(Object), 8);
        let text = variant.has_text_node() as usize;
        assert_eq!((kinds(Text), kinds(Fusion)), (text, text), "{variant}");
        assert_eq!(trace.attention.len(), if variant.message_passing() { 2 } else { 0 });
        assert_eq!(trace.logits.len(), 3);
    }
}

#[test]
fn incompatible_inputs_are_rejected() {
    let ep = &episodes(9)[0];
    let p = params(Variant::Full, 1);
    assert!(forward(ep, &p, &config(Variant::StaticGraph)).is_err());
    let other = ModelParams::init(&ModelDims::new(4, 5, 3), Variant::Full, 1).unwrap();
    assert!(forward(ep, &other, &config(Variant::Full)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_sums_to_one_everywhere(seed in any::<u64>(), variant_ix in 2usize..4) {
        let variant = Variant::ALL[variant_ix];
        let eps = episodes(seed % 1000);
        let ep = &eps[(seed % eps.len() as u64) as usize];
        let trace = forward(ep, &params(variant, seed), &config(variant)).unwrap();
        for layer in &trace.attention {
            let mut sums = vec![0.0; trace.graph.num_nodes()];
            for &(i, _, a) in layer {
                prop_assert!(a >= 0.0);
                sums[i] += a;
            }
            for s in sums {
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn adaptation_keeps_temporal_chain(seed in any::<u64>(), prune in -0.5f64..0.5, gap in 0.05f64..1.0) {
        let mut rng = SeededRng::new(seed);
        let (mut g, _) = random_graph(&mut rng, 4);
        let frames = g.count_nodes(mmgraph::graph::NodeKind::Frame);
        let m = random_matrix(4, 4, 1.0, &mut rng);
        let view = AdaptView { lambda: [0.1, 0.1, 0.1], prune_threshold: prune, add_threshold: prune + gap, m: &m };
        for _ in 0..10 {
            let h: Vec<Vec<f64>> = (0..g.num_nodes()).map(|_| common::random_vec(4, &mut rng)).collect();
            refine_edges(&mut g, &h, &view).unwrap();
            adapt_topology(&mut g, &h, &view).unwrap();
            prop_assert_eq!(g.count_edges(EdgeKind::Temporal, true), frames - 1);
            prop_assert_eq!(g.count_edges(EdgeKind::Temporal, false), frames - 1);
            prop_assert_eq!(g.components(), 1);
            g.validate().unwrap();
        }
    }

    #[test]
    fn extreme_thresholds_freeze_topology(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let (mut g, h) = random_graph(&mut rng, 4);
        let m = random_matrix(4, 4, 1.0, &mut rng);
        let before = g.clone();
        let view = AdaptView { lambda: [0.1; 3], prune_threshold: -2.0, add_threshold: 1.01, m: &m };
        let change = adapt_topology(&mut g, &h, &view).unwrap();
        prop_assert_eq!((change.pruned, change.added), (0, 0));
        prop_assert_eq!(g, before);
    }
}
