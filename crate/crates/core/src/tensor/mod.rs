//! Dense `f64` tensors, a reverse-mode tape, and the optimizer pieces used
//! to train the model.
//!
//! Tensors are row-major. Anything of rank ≤ 2 can be viewed as a matrix:
//! a scalar is `1×1`, a vector of length `n` is `1×n`.

mod optim;
mod rng;
mod tape;

pub use optim::{AdamState, LrSchedule};
pub use rng::SeededRng;
pub use tape::{Pairs, Tape, Var};

use crate::error::{Error, Result};

/// Norms below this are treated as zero by [`cosine_sim`].
pub const NORM_EPSILON: f64 = 1e-12;

/// Slope of the negative branch of LeakyReLU inside graph attention.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Fills with `uniform(-bound, bound)` draws.
    pub fn uniform(shape: impl Into<Vec<usize>>, bound: f64, rng: &mut SeededRng) -> Self {
        let mut t = Self::zeros(shape);
        for x in &mut t.data {
            *x = rng.uniform_in(-bound, bound);
        }
        t
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Matrix view of a rank ≤ 2 tensor.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => (other[..other.len() - 1].iter().product(), other[other.len() - 1]),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.rows_cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn tracked(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::Shape {
                op: "accumulate_grad",
                lhs: self.shape.clone(),
                rhs: vec![g.len()],
            });
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Copy without gradient state.
    pub fn detached(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::DataLength {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }
}

/// Cosine similarity of two equal-length slices.
///
/// Returns [`Error::ZeroNorm`] when either norm is below [`NORM_EPSILON`],
/// unless `zero_fallback` is set, in which case the result is `0.0`.
pub fn cosine_sim(u: &[f64], v: &[f64], zero_fallback: bool) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "cosine_sim",
            lhs: vec![u.len()],
            rhs: vec![v.len()],
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu < NORM_EPSILON || nv < NORM_EPSILON {
        return if zero_fallback {
            Ok(0.0)
        } else {
            Err(Error::ZeroNorm)
        };
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.clamp(-1.0, 1.0))
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.rows_cols(), (2, 3));
    }

    #[test]
    fn scalar_and_vector_views() {
        assert_eq!(Tensor::scalar(1.0).rows_cols(), (1, 1));
        assert_eq!(Tensor::vector(vec![1.0, 2.0]).rows_cols(), (1, 2));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0], false).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0], false).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 2.0], &[2.0, 1.0], false).unwrap() - 0.8).abs() < 1e-15);
        assert!((cosine_sim(&[1.0, 2.0], &[-1.0, -2.0], false).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_norm_policy() {
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0], false),
            Err(Error::ZeroNorm)
        ));
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0], true).unwrap(), 0.0);
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::vector(vec![1.0, 2.0]).tracked();
        t.accumulate_grad(&[1.0, 1.0]).unwrap();
        t.accumulate_grad(&[0.5, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.5, 3.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }
}
