use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Adam moments for an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first_moment: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.numel()]).collect();
        let second_moment = first_moment.clone();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update. Parameters without a gradient buffer
    /// are treated as having a zero gradient.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {lr} must be non-negative")));
        }
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != self.first_moment.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![self.first_moment.len()],
                rhs: vec![params.len()],
            });
        }
        for (p, m) in params.iter().zip(&self.first_moment) {
            if p.numel() != m.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: vec![m.len()],
                    rhs: p.shape().to_vec(),
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.into_iter().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            let grad = p.grad().map(<[f64]>::to_vec);
            let data = p.data_mut();
            for k in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                data[k] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Linear warm-up followed by cosine annealing, evaluated per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_epochs: usize, total_epochs: usize) -> Result<Self> {
        if !(base_lr >= 0.0) || !base_lr.is_finite() {
            return Err(Error::InvalidConfig(format!("base_lr {base_lr} must be finite and ≥ 0")));
        }
        if total_epochs == 0 || warmup_epochs >= total_epochs {
            return Err(Error::InvalidConfig(format!(
                "warm-up of {warmup_epochs} epochs needs a longer schedule than {total_epochs}"
            )));
        }
        Ok(Self {
            base_lr,
            warmup_epochs,
            total_epochs,
        })
    }

    /// Warm-up epochs ramp linearly from `base_lr / warmup` to `base_lr`;
    /// the remaining epochs follow `base_lr · ½(1 + cos(π·(e − w)/(T − w)))`.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        let w = self.warmup_epochs;
        if epoch < w {
            return Ok(self.base_lr * (epoch + 1) as f64 / w as f64);
        }
        let progress = (epoch - w) as f64 / (self.total_epochs - w) as f64;
        Ok(self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::scalar(v).tracked()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::vector(vec![0.3, -1.2, 4.0]).tracked()];
        let before = p[0].clone();
        let mut state = AdamState::new(p.iter());
        p[0].accumulate_grad(&[0.0, 0.0, 0.0]).unwrap();
        for _ in 0..5 {
            state.step(p.iter_mut(), 1e-3).unwrap();
        }
        assert_eq!(p[0].data(), before.data());
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![scalar_param(2.0)];
        let mut state = AdamState::new(p.iter());
        p[0].accumulate_grad(&[1.0]).unwrap();
        state.step(p.iter_mut(), 1e-3).unwrap();
        // m̂/√v̂ = 1 at step 1, so Δ = -lr·1/(1 + eps).
        let expected = 2.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn repeated_identical_steps_do_not_grow() {
        let mut p = vec![scalar_param(0.0)];
        let mut state = AdamState::new(p.iter());
        p[0].accumulate_grad(&[0.7]).unwrap();
        state.step(p.iter_mut(), 1e-2).unwrap();
        let d1 = p[0].item().abs();
        let before = p[0].item();
        state.step(p.iter_mut(), 1e-2).unwrap();
        let d2 = (p[0].item() - before).abs();
        assert!(d2 <= d1 + 1e-9, "{d2} > {d1}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut state = AdamState::new(p.iter());
        let mut other = vec![Tensor::vector(vec![1.0, 2.0, 3.0])];
        assert!(state.step(other.iter_mut(), 1e-3).is_err());
        assert!(state.step(p.iter_mut(), -1.0).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::new(1e-4, 5, 50).unwrap();
        assert_eq!(s.lr_at(5).unwrap(), 1e-4);
        assert_eq!(s.lr_at(4).unwrap(), 1e-4);
        assert!((s.lr_at(0).unwrap() - 2e-5).abs() < 1e-20);
        let last = s.lr_at(49).unwrap();
        let expected = 1e-4 * 0.5 * (1.0 + (std::f64::consts::PI * 44.0 / 45.0).cos());
        assert!((last - expected).abs() < 1e-18);
        assert!(last > 0.0 && last < 1e-6);
        // Annealing span is 45 epochs; an even span has an exact midpoint.
        let even = LrSchedule::new(1.0, 2, 12).unwrap();
        assert!((even.lr_at(7).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(s.lr_at(50), Err(Error::EpochOutOfRange { .. })));
    }

    #[test]
    fn schedule_is_non_increasing_after_warmup() {
        let s = LrSchedule::new(1e-4, 5, 50).unwrap();
        for e in 5..49 {
            assert!(s.lr_at(e + 1).unwrap() <= s.lr_at(e).unwrap());
        }
        for e in 0..50 {
            assert!(s.lr_at(e).unwrap() >= 0.0);
        }
    }

    #[test]
    fn invalid_schedules() {
        assert!(LrSchedule::new(1e-4, 5, 5).is_err());
        assert!(LrSchedule::new(-1.0, 0, 5).is_err());
        assert!(LrSchedule::new(1e-4, 0, 1).is_ok());
    }
}
