#![allow(dead_code)]

use mmgraph::embedding::ObjectFeature;
use mmgraph::graph::{build_graph, EdgeKind, GraphConfig, GraphInput, MultimodalGraph, NodeKind};
use mmgraph::tensor::{SeededRng, Tensor, LEAKY_SLOPE};

pub fn random_vec(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Tensor {
    Tensor::uniform(vec![rows, cols], scale, rng)
}

/// `frames` frames, up to `max_objects` objects per frame, one text node,
/// every feature of size `dim`.
pub fn random_input(frames: usize, max_objects: usize, dim: usize, rng: &mut SeededRng) -> GraphInput {
    let mut objects = Vec::new();
    for t in 0..frames {
        for k in 0..rng.below(max_objects + 1) {
            objects.push(ObjectFeature {
                frame_index: t,
                region_id: format!("r{k}"),
                feature: random_vec(dim, rng),
            });
        }
    }
    GraphInput {
        frames: (0..frames).map(|_| random_vec(dim, rng)).collect(),
        objects,
        text: Some(random_vec(dim, rng)),
    }
}

/// A connected random graph and its node features as rows.
pub fn random_graph(rng: &mut SeededRng, dim: usize) -> (MultimodalGraph, Vec<Vec<f64>>) {
    let frames = 1 + rng.below(5);
    let input = random_input(frames, 3, dim, rng);
    let cfg = GraphConfig {
        spatial_threshold: rng.uniform_in(-1.0, 1.0),
        semantic_threshold: rng.uniform_in(-1.0, 1.0),
    };
    let g = build_graph(&input, &cfg, None).unwrap();
    let h = g.nodes().iter().map(|n| n.feature.clone()).collect();
    (g, h)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn cos(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu < 1e-12 || nv < 1e-12 {
        0.0
    } else {
        dot(u, v) / (nu * nv)
    }
}

/// Row vector times matrix.
pub fn vecmat(x: &[f64], m: &Tensor) -> Vec<f64> {
    let (r, c) = m.rows_cols();
    assert_eq!(r, x.len());
    (0..c).map(|j| (0..r).map(|i| x[i] * m.data()[i * c + j]).sum()).collect()
}

pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Active neighbors of `i` with the kind of the connecting edge.
pub fn neighbors(g: &MultimodalGraph, i: usize) -> Vec<(usize, EdgeKind)> {
    g.edges()
        .iter()
        .filter(|e| e.active && (e.i == i || e.j == i))
        .map(|e| (if e.i == i { e.j } else { e.i }, e.kind))
        .collect()
}

/// Modulation term written out case by case.
pub fn phi_oracle(g: &MultimodalGraph, kind: EdgeKind, i: usize, j: usize, h: &[Vec<f64>], omega: [f64; 3], m: &Tensor) -> f64 {
    match kind {
        EdgeKind::Temporal => {
            let (a, b) = (g.node(i), g.node(j));
            let adjacent = a.kind == NodeKind::Frame
                && b.kind == NodeKind::Frame
                && (a.frame_index.unwrap() as i64 - b.frame_index.unwrap() as i64).abs() == 1;
            if adjacent {
                omega[0]
            } else {
                0.0
            }
        }
        EdgeKind::Spatial => omega[1] * cos(&h[i], &h[j]),
        EdgeKind::Semantic => {
            let s = dot(&h[i], &vecmat(&h[j], &transpose(m)));
            omega[2] / (1.0 + (-s).exp())
        }
    }
}

pub fn transpose(m: &Tensor) -> Tensor {
    let (r, c) = m.rows_cols();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = m.data()[i * c + j];
        }
    }
    Tensor::matrix(c, r, out).unwrap()
}

/// Dense `N × N` attention matrix, `A[i][j] = α_ij`, by direct enumeration.
pub fn attention_oracle(
    g: &MultimodalGraph,
    h: &[Vec<f64>],
    w: &Tensor,
    a: &Tensor,
    omega: [f64; 3],
    m: &Tensor,
) -> Vec<Vec<f64>> {
    let n = h.len();
    let z: Vec<Vec<f64>> = h.iter().map(|x| vecmat(x, w)).collect();
    let d = z[0].len();
    let (a_recv, a_send) = a.data().split_at(d);
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        let nb = neighbors(g, i);
        let scores: Vec<f64> = nb
            .iter()
            .map(|&(j, kind)| leaky(dot(a_recv, &z[i]) + dot(a_send, &z[j])) + phi_oracle(g, kind, i, j, h, omega, m))
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = scores.iter().map(|s| (s - top).exp()).sum();
        for (&(j, _), s) in nb.iter().zip(&scores) {
            out[i][j] += (s - top).exp() / total;
        }
    }
    out
}

/// `ReLU(A · HW)` with the dense attention matrix.
pub fn layer_oracle(
    g: &MultimodalGraph,
    h: &[Vec<f64>],
    w: &Tensor,
    a: &Tensor,
    omega: [f64; 3],
    m: &Tensor,
) -> Vec<Vec<f64>> {
    let att = attention_oracle(g, h, w, a, omega, m);
    let z: Vec<Vec<f64>> = h.iter().map(|x| vecmat(x, w)).collect();
    att.iter()
        .map(|row| {
            (0..z[0].len())
                .map(|c| row.iter().zip(&z).map(|(al, zj)| al * zj[c]).sum::<f64>().max(0.0))
                .collect()
        })
        .collect()
}

/// A plain single-head GAT layer: no modulation, no edge types.
pub fn vanilla_gat(adjacency: &[Vec<usize>], h: &[Vec<f64>], w: &Tensor, a: &Tensor) -> Vec<Vec<f64>> {
    let z: Vec<Vec<f64>> = h.iter().map(|x| vecmat(x, w)).collect();
    let d = z[0].len();
    adjacency
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let e: Vec<f64> = nb
                .iter()
                .map(|&j| {
                    let cat: Vec<f64> = z[i].iter().chain(&z[j]).copied().collect();
                    leaky(dot(a.data(), &cat))
                })
                .collect();
            let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = ex.iter().sum();
            (0..d)
                .map(|c| nb.iter().zip(&ex).map(|(&j, x)| x / s * z[j][c]).sum::<f64>().max(0.0))
                .collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
