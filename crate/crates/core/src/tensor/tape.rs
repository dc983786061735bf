use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::{Tensor, NORM_EPSILON};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Directed `(receiver, sender)` index pairs shared between the ops of one
/// message-passing step.
pub type Pairs = Rc<[(usize, usize)]>;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MulScalar { x: usize, s: usize },
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    Sum(usize),
    MeanRows(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Rows(usize, Vec<usize>),
    Gather(usize, Vec<usize>),
    PairDot { a: usize, b: usize, pairs: Pairs },
    PairCosine { x: usize, pairs: Pairs },
    SegmentSoftmax { x: usize, segments: Vec<usize> },
    ScatterRows { alpha: usize, x: usize, pairs: Pairs },
    MaskedSoftmax { x: usize, mask: Vec<bool> },
    SoftmaxRows(usize),
    Cosine { u: usize, v: usize },
    CrossEntropy { logits: usize, label: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records a computation for reverse-mode differentiation.
///
/// Node ids are assigned in execution order, so the id order is a valid
/// topological order for the backward sweep. A tape is single-threaded;
/// data-parallel training uses one tape per episode.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `t` as an input, tracked iff `t.requires_grad()`.
    pub fn leaf(&self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        let mut value = t;
        value.zero_grad();
        self.push_raw(value, Op::Leaf, requires_grad)
    }

    /// Records a tracked copy of a parameter.
    pub fn param(&self, t: &Tensor) -> Var {
        self.push_raw(t.detached(), Op::Leaf, true)
    }

    pub fn constant(&self, t: Tensor) -> Var {
        let mut value = t;
        value.set_requires_grad(false);
        value.zero_grad();
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// Accumulated gradient of a tracked leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    pub fn zero_grads(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn push(&self, value: Tensor, op: Op, parents: &[usize]) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push_raw(value, op, requires_grad)
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(Error::Shape { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    fn map_unary(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let nodes = self.nodes.borrow();
        let src = &nodes[x.0].value;
        let data = src.data().iter().map(|&v| f(v)).collect();
        Tensor::new(src.shape().to_vec(), data).expect("same shape")
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = ta.rows_cols();
            let (k2, n) = tb.rows_cols();
            if k != k2 {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                });
            }
            let (ad, bd) = (ta.data(), tb.data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
            Tensor::matrix(m, n, out)?
        };
        Ok(self.push(out, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn transpose(&self, x: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let (r, c) = t.rows_cols();
            let d = t.data();
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            Tensor::matrix(c, r, out).expect("transpose shape")
        };
        self.push(out, Op::Transpose(x.0), &[x.0])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        let out = self.map_unary(x, |v| v * c);
        self.push(out, Op::Scale(x.0, c), &[x.0])
    }

    /// `s · x` for a single-element `s`.
    pub fn mul_scalar(&self, x: Var, s: Var) -> Result<Var> {
        let sv = {
            let nodes = self.nodes.borrow();
            let st = &nodes[s.0].value;
            if st.numel() != 1 {
                return Err(Error::Shape {
                    op: "mul_scalar",
                    lhs: nodes[x.0].value.shape().to_vec(),
                    rhs: st.shape().to_vec(),
                });
            }
            st.item()
        };
        let out = self.map_unary(x, |v| v * sv);
        Ok(self.push(out, Op::MulScalar { x: x.0, s: s.0 }, &[x.0, s.0]))
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.map_unary(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x.0), &[x.0])
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        let out = self.map_unary(x, |v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x.0, slope), &[x.0])
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.map_unary(x, super::sigmoid);
        self.push(out, Op::Sigmoid(x.0), &[x.0])
    }

    pub fn exp(&self, x: Var) -> Var {
        let out = self.map_unary(x, f64::exp);
        self.push(out, Op::Exp(x.0), &[x.0])
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.nodes.borrow()[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0), &[x.0])
    }

    /// Column means of a matrix, as a `1×c` row.
    pub fn mean_rows(&self, x: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let (r, c) = t.rows_cols();
            if r == 0 {
                return Err(Error::Empty("mean over zero rows"));
            }
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(t.row(i)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            Tensor::matrix(1, c, out)?
        };
        Ok(self.push(out, Op::MeanRows(x.0), &[x.0]))
    }

    /// Stacks matrices (or row vectors) with equal column counts.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = parts.first().ok_or(Error::Empty("concat_rows"))?;
            let (_, c) = nodes[first.0].value.rows_cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = &nodes[p.0].value;
                let (r, pc) = t.rows_cols();
                if pc != c {
                    return Err(Error::Shape {
                        op: "concat_rows",
                        lhs: nodes[first.0].value.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                rows += r;
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, c, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(out, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
            let (r, _) = nodes[first.0].value.rows_cols();
            let mut total = 0;
            for p in parts {
                let t = &nodes[p.0].value;
                let (pr, pc) = t.rows_cols();
                if pr != r {
                    return Err(Error::Shape {
                        op: "concat_cols",
                        lhs: nodes[first.0].value.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                total += pc;
            }
            let mut data = Vec::with_capacity(r * total);
            for i in 0..r {
                for p in parts {
                    data.extend_from_slice(nodes[p.0].value.row(i));
                }
            }
            Tensor::matrix(r, total, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(out, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Gathers rows by index; repeated indices are allowed.
    pub fn rows(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let (r, c) = t.rows_cols();
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                if i >= r {
                    return Err(Error::IndexOutOfRange(format!("row {i} of {r}")));
                }
                data.extend_from_slice(t.row(i));
            }
            Tensor::matrix(idx.len(), c, data)?
        };
        Ok(self.push(out, Op::Rows(x.0, idx.to_vec()), &[x.0]))
    }

    /// Gathers flat elements by index into a vector.
    pub fn gather(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let d = nodes[x.0].value.data();
            let mut data = Vec::with_capacity(idx.len());
            for &i in idx {
                data.push(
                    *d.get(i)
                        .ok_or_else(|| Error::IndexOutOfRange(format!("element {i} of {}", d.len())))?,
                );
            }
            Tensor::vector(data)
        };
        Ok(self.push(out, Op::Gather(x.0, idx.to_vec()), &[x.0]))
    }

    fn check_pairs(&self, op: &'static str, rows: usize, pairs: &[(usize, usize)]) -> Result<()> {
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= rows || j >= rows) {
            return Err(Error::IndexOutOfRange(format!("{op}: pair ({i}, {j}) with {rows} rows")));
        }
        Ok(())
    }

    /// `out[e] = a[i_e] · b[j_e]` over row pairs.
    pub fn pair_dot(&self, a: Var, b: Var, pairs: &Pairs) -> Result<Var> {
        self.same_shape("pair_dot", a, b)?;
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            self.check_pairs("pair_dot", ta.rows_cols().0, pairs)?;
            Tensor::vector(pairs.iter().map(|&(i, j)| super::dot(ta.row(i), tb.row(j))).collect())
        };
        Ok(self.push(
            out,
            Op::PairDot {
                a: a.0,
                b: b.0,
                pairs: pairs.clone(),
            },
            &[a.0, b.0],
        ))
    }

    /// `out[e] = cos(x[i_e], x[j_e])`, with `0` (and zero gradient) for
    /// near-zero rows.
    pub fn pair_cosine(&self, x: Var, pairs: &Pairs) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            self.check_pairs("pair_cosine", t.rows_cols().0, pairs)?;
            Tensor::vector(
                pairs
                    .iter()
                    .map(|&(i, j)| super::cosine_sim(t.row(i), t.row(j), true).expect("equal rows"))
                    .collect(),
            )
        };
        Ok(self.push(
            out,
            Op::PairCosine {
                x: x.0,
                pairs: pairs.clone(),
            },
            &[x.0],
        ))
    }

    /// Softmax within groups of a vector; `segments[e]` names the group of
    /// element `e`.
    pub fn segment_softmax(&self, x: Var, segments: &[usize]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let d = nodes[x.0].value.data();
            if d.len() != segments.len() {
                return Err(Error::Shape {
                    op: "segment_softmax",
                    lhs: vec![d.len()],
                    rhs: vec![segments.len()],
                });
            }
            let nseg = segments.iter().max().map_or(0, |m| m + 1);
            let mut max = vec![f64::NEG_INFINITY; nseg];
            for (&v, &s) in d.iter().zip(segments) {
                max[s] = max[s].max(v);
            }
            let mut out: Vec<f64> = d.iter().zip(segments).map(|(&v, &s)| (v - max[s]).exp()).collect();
            let mut denom = vec![0.0; nseg];
            for (&e, &s) in out.iter().zip(segments) {
                denom[s] += e;
            }
            for (o, &s) in out.iter_mut().zip(segments) {
                *o /= denom[s];
            }
            Tensor::vector(out)
        };
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                x: x.0,
                segments: segments.to_vec(),
            },
            &[x.0],
        ))
    }

    /// `out[i] = Σ_{e : i_e = i} alpha[e] · x[j_e]` for `n_out` receivers.
    pub fn scatter_rows(&self, alpha: Var, x: Var, pairs: &Pairs, n_out: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tx) = (&nodes[alpha.0].value, &nodes[x.0].value);
            if ta.numel() != pairs.len() {
                return Err(Error::Shape {
                    op: "scatter_rows",
                    lhs: ta.shape().to_vec(),
                    rhs: vec![pairs.len()],
                });
            }
            let (r, c) = tx.rows_cols();
            if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n_out || j >= r) {
                return Err(Error::IndexOutOfRange(format!("scatter pair ({i}, {j})")));
            }
            let mut out = vec![0.0; n_out * c];
            for (&a, &(i, j)) in ta.data().iter().zip(pairs.iter()) {
                let dst = &mut out[i * c..(i + 1) * c];
                for (o, v) in dst.iter_mut().zip(tx.row(j)) {
                    *o += a * v;
                }
            }
            Tensor::matrix(n_out, c, out)?
        };
        Ok(self.push(
            out,
            Op::ScatterRows {
                alpha: alpha.0,
                x: x.0,
                pairs: pairs.clone(),
            },
            &[alpha.0, x.0],
        ))
    }

    /// Softmax over the entries where `mask` is true; masked entries are `0`.
    pub fn masked_softmax(&self, x: Var, mask: &[bool]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            if t.numel() != mask.len() {
                return Err(Error::Shape {
                    op: "masked_softmax",
                    lhs: t.shape().to_vec(),
                    rhs: vec![mask.len()],
                });
            }
            let out = masked_softmax_values(t.data(), mask)?;
            Tensor::new(t.shape().to_vec(), out)?
        };
        Ok(self.push(
            out,
            Op::MaskedSoftmax {
                x: x.0,
                mask: mask.to_vec(),
            },
            &[x.0],
        ))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&self, x: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let (r, _) = t.rows_cols();
            let mut data = Vec::with_capacity(t.numel());
            for i in 0..r {
                let row = t.row(i);
                let mask = vec![true; row.len()];
                data.extend(masked_softmax_values(row, &mask).expect("non-empty row"));
            }
            Tensor::new(t.shape().to_vec(), data).expect("same shape")
        };
        self.push(out, Op::SoftmaxRows(x.0), &[x.0])
    }

    /// Cosine similarity of two equal-size tensors, flattened.
    pub fn cosine(&self, u: Var, v: Var, zero_fallback: bool) -> Result<Var> {
        let c = {
            let nodes = self.nodes.borrow();
            let (tu, tv) = (&nodes[u.0].value, &nodes[v.0].value);
            super::cosine_sim(tu.data(), tv.data(), zero_fallback)?
        };
        Ok(self.push(Tensor::scalar(c), Op::Cosine { u: u.0, v: v.0 }, &[u.0, v.0]))
    }

    /// `-log softmax(logits)[label]`, stabilized by max subtraction.
    pub fn cross_entropy(&self, logits: Var, label: usize) -> Result<Var> {
        let loss = {
            let nodes = self.nodes.borrow();
            let z = nodes[logits.0].value.data();
            if label >= z.len() {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: z.len(),
                });
            }
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[label]
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                label,
            },
            &[logits.0],
        ))
    }

    /// Back-propagates from a scalar, adding into the gradient buffers of
    /// every tracked leaf. Buffers persist across calls until
    /// [`Tape::zero_grads`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(nodes[loss.0].value.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        {
            let nodes: &Vec<Node> = &nodes;
            for id in (0..n).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                backprop_node(nodes, node, &g, &mut grads);
                if matches!(node.op, Op::Leaf) {
                    leaf_grads.push((id, g));
                }
            }
        }
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

pub(crate) fn masked_softmax_values(x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let m = x
        .iter()
        .zip(mask)
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY && !mask.iter().any(|&k| k) {
        return Err(Error::EmptyNeighborhood);
    }
    let mut out: Vec<f64> = x
        .iter()
        .zip(mask)
        .map(|(&v, &k)| if k { (v - m).exp() } else { 0.0 })
        .collect();
    let denom: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= denom);
    Ok(out)
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (ta, tb) = (&nodes[a].value, &nodes[b].value);
            let (m, k) = ta.rows_cols();
            let (_, n) = tb.rows_cols();
            if let Some(ga) = acc(grads, nodes, a) {
                let bd = tb.data();
                for i in 0..m {
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        ga[i * k + p] += g[i * n..(i + 1) * n].iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, b) {
                let ad = ta.data();
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += aip * gv;
                        }
                    }
                }
            }
        }
        &Op::Transpose(x) => {
            let (r, c) = nodes[x].value.rows_cols();
            if let Some(gx) = acc(grads, nodes, x) {
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        &Op::Add(a, b) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
            if let Some(gb) = acc(grads, nodes, b) {
                gb.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
        }
        &Op::Sub(a, b) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
            if let Some(gb) = acc(grads, nodes, b) {
                gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v);
            }
        }
        &Op::Mul(a, b) => {
            let (da, db) = (nodes[a].value.data(), nodes[b].value.data());
            if let Some(ga) = acc(grads, nodes, a) {
                for ((o, gv), bv) in ga.iter_mut().zip(g).zip(db) {
                    *o += gv * bv;
                }
            }
            if let Some(gb) = acc(grads, nodes, b) {
                for ((o, gv), av) in gb.iter_mut().zip(g).zip(da) {
                    *o += gv * av;
                }
            }
        }
        &Op::Scale(x, c) => {
            if let Some(gx) = acc(grads, nodes, x) {
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += c * v);
            }
        }
        &Op::MulScalar { x, s } => {
            let sv = nodes[s].value.item();
            let dx = nodes[x].value.data();
            if let Some(gx) = acc(grads, nodes, x) {
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += sv * v);
            }
            if let Some(gs) = acc(grads, nodes, s) {
                gs[0] += g.iter().zip(dx).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        &Op::Relu(x) => {
            let dx = nodes[x].value.data();
            if let Some(gx) = acc(grads, nodes, x) {
                for ((o, gv), &v) in gx.iter_mut().zip(g).zip(dx) {
                    if v > 0.0 {
                        *o += gv;
                    }
                }
            }
        }
        &Op::LeakyRelu(x, slope) => {
            let dx = nodes[x].value.data();
            if let Some(gx) = acc(grads, nodes, x) {
                for ((o, gv), &v) in gx.iter_mut().zip(g).zip(dx) {
                    *o += if v > 0.0 { *gv } else { slope * gv };
                }
            }
        }
        &Op::Sigmoid(x) => {
            if let Some(gx) = acc(grads, nodes, x) {
                for ((o, gv), &s) in gx.iter_mut().zip(g).zip(y) {
                    *o += gv * s * (1.0 - s);
                }
            }
        }
        &Op::Exp(x) => {
            if let Some(gx) = acc(grads, nodes, x) {
                for ((o, gv), &e) in gx.iter_mut().zip(g).zip(y) {
                    *o += gv * e;
                }
            }
        }
        &Op::Sum(x) => {
            if let Some(gx) = acc(grads, nodes, x) {
                gx.iter_mut().for_each(|o| *o += g[0]);
            }
        }
        &Op::MeanRows(x) => {
            let (r, c) = nodes[x].value.rows_cols();
            if let Some(gx) = acc(grads, nodes, x) {
                let inv = 1.0 / r as f64;
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j] * inv;
                    }
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.numel();
                if let Some(gp) = acc(grads, nodes, p) {
                    gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(o, v)| *o += v);
                }
                offset += len;
            }
        }
        Op::ConcatCols(parts) => {
            let (r, total) = node.value.rows_cols();
            let mut col = 0;
            for &p in parts {
                let (_, pc) = nodes[p].value.rows_cols();
                if let Some(gp) = acc(grads, nodes, p) {
                    for i in 0..r {
                        for j in 0..pc {
                            gp[i * pc + j] += g[i * total + col + j];
                        }
                    }
                }
                col += pc;
            }
        }
        Op::Rows(x, idx) => {
            let (_, c) = nodes[*x].value.rows_cols();
            if let Some(gx) = acc(grads, nodes, *x) {
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += g[k * c + j];
                    }
                }
            }
        }
        Op::Gather(x, idx) => {
            if let Some(gx) = acc(grads, nodes, *x) {
                for (k, &i) in idx.iter().enumerate() {
                    gx[i] += g[k];
                }
            }
        }
        Op::PairDot { a, b, pairs } => {
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            let c = ta.rows_cols().1;
            if let Some(ga) = acc(grads, nodes, *a) {
                for (&ge, &(i, j)) in g.iter().zip(pairs.iter()) {
                    for (o, v) in ga[i * c..(i + 1) * c].iter_mut().zip(tb.row(j)) {
                        *o += ge * v;
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, *b) {
                for (&ge, &(i, j)) in g.iter().zip(pairs.iter()) {
                    for (o, v) in gb[j * c..(j + 1) * c].iter_mut().zip(ta.row(i)) {
                        *o += ge * v;
                    }
                }
            }
        }
        Op::PairCosine { x, pairs } => {
            let t = &nodes[*x].value;
            let c = t.rows_cols().1;
            if let Some(gx) = acc(grads, nodes, *x) {
                for ((&ge, &(i, j)), &cos) in g.iter().zip(pairs.iter()).zip(y) {
                    let (u, v) = (t.row(i), t.row(j));
                    let (nu, nv) = (super::norm(u), super::norm(v));
                    if nu < NORM_EPSILON || nv < NORM_EPSILON {
                        continue;
                    }
                    for k in 0..c {
                        gx[i * c + k] += ge * (v[k] / (nu * nv) - cos * u[k] / (nu * nu));
                        gx[j * c + k] += ge * (u[k] / (nu * nv) - cos * v[k] / (nv * nv));
                    }
                }
            }
        }
        Op::SegmentSoftmax { x, segments } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                let nseg = segments.iter().max().map_or(0, |m| m + 1);
                let mut dots = vec![0.0; nseg];
                for ((&ge, &ye), &s) in g.iter().zip(y).zip(segments) {
                    dots[s] += ge * ye;
                }
                for (((o, &ge), &ye), &s) in gx.iter_mut().zip(g).zip(y).zip(segments) {
                    *o += ye * (ge - dots[s]);
                }
            }
        }
        Op::ScatterRows { alpha, x, pairs } => {
            let (ta, tx) = (&nodes[*alpha].value, &nodes[*x].value);
            let c = tx.rows_cols().1;
            if let Some(galpha) = acc(grads, nodes, *alpha) {
                for (o, &(i, j)) in galpha.iter_mut().zip(pairs.iter()) {
                    *o += super::dot(&g[i * c..(i + 1) * c], tx.row(j));
                }
            }
            if let Some(gx) = acc(grads, nodes, *x) {
                for (&a, &(i, j)) in ta.data().iter().zip(pairs.iter()) {
                    for k in 0..c {
                        gx[j * c + k] += a * g[i * c + k];
                    }
                }
            }
        }
        Op::MaskedSoftmax { x, mask } => {
            if let Some(gx) = acc(grads, nodes, *x) {
                let dot: f64 = g.iter().zip(y).zip(mask).filter(|(_, &m)| m).map(|((a, b), _)| a * b).sum();
                for (((o, &ge), &ye), &m) in gx.iter_mut().zip(g).zip(y).zip(mask) {
                    if m {
                        *o += ye * (ge - dot);
                    }
                }
            }
        }
        &Op::SoftmaxRows(x) => {
            let (r, c) = node.value.rows_cols();
            if let Some(gx) = acc(grads, nodes, x) {
                for i in 0..r {
                    let (gr, yr) = (&g[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                    let dot = super::dot(gr, yr);
                    for k in 0..c {
                        gx[i * c + k] += yr[k] * (gr[k] - dot);
                    }
                }
            }
        }
        &Op::Cosine { u, v } => {
            let (du, dv) = (nodes[u].value.data(), nodes[v].value.data());
            let (nu, nv) = (super::norm(du), super::norm(dv));
            if nu < NORM_EPSILON || nv < NORM_EPSILON {
                return;
            }
            let cos = y[0];
            if let Some(gu) = acc(grads, nodes, u) {
                for k in 0..du.len() {
                    gu[k] += g[0] * (dv[k] / (nu * nv) - cos * du[k] / (nu * nu));
                }
            }
            if let Some(gv) = acc(grads, nodes, v) {
                for k in 0..dv.len() {
                    gv[k] += g[0] * (du[k] / (nu * nv) - cos * dv[k] / (nv * nv));
                }
            }
        }
        &Op::CrossEntropy { logits, label } => {
            let z = nodes[logits].value.data();
            if let Some(gz) = acc(grads, nodes, logits) {
                let p = masked_softmax_values(z, &vec![true; z.len()]).expect("non-empty logits");
                for (k, (o, pk)) in gz.iter_mut().zip(p).enumerate() {
                    let target = if k == label { 1.0 } else { 0.0 };
                    *o += g[0] * (pk - target);
                }
            }
        }
    }
}
