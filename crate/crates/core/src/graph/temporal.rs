use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Query, key and value projections, each `d_V × d_V`, applied on the right.
#[derive(Clone, Copy, Debug)]
pub struct TemporalVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

/// Single-head self-attention across frames with a residual:
/// `X + softmax(XW_q (XW_k)ᵀ / √d) · XW_v`.
pub fn temporal_aggregate(tape: &Tape, frames: Var, w: &TemporalVars) -> Result<Var> {
    let d = tape.value(frames).rows_cols().1;
    let q = tape.matmul(frames, w.query)?;
    let k = tape.matmul(frames, w.key)?;
    let v = tape.matmul(frames, w.value)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax_rows(scores);
    let mixed = tape.matmul(attn, v)?;
    tape.add(frames, mixed)
}

/// Untracked convenience wrapper over row vectors.
pub fn temporal_aggregate_values(
    frames: &[Vec<f64>],
    query: &Tensor,
    key: &Tensor,
    value: &Tensor,
) -> Result<Vec<Vec<f64>>> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames to aggregate"));
    }
    let tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(frames)?);
    let w = TemporalVars {
        query: tape.constant(query.clone()),
        key: tape.constant(key.clone()),
        value: tape.constant(value.clone()),
    };
    let out = temporal_aggregate(&tape, x, &w)?;
    let out = tape.value(out);
    Ok((0..frames.len()).map(|i| out.row(i).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    #[test]
    fn zero_projections_are_identity() {
        let z = Tensor::zeros([2, 2]);
        let x = vec![vec![1.0, -2.0]];
        assert_eq!(temporal_aggregate_values(&x, &z, &z, &z).unwrap(), x);
    }

    #[test]
    fn identical_frames_stay_identical() {
        let mut rng = SeededRng::new(3);
        let w: Vec<Tensor> = (0..3).map(|_| Tensor::uniform([3, 3], 0.5, &mut rng)).collect();
        let x = vec![vec![0.3, -0.1, 0.7]; 4];
        let out = temporal_aggregate_values(&x, &w[0], &w[1], &w[2]).unwrap();
        assert!(out.iter().all(|r| r == &out[0]));
    }
}
