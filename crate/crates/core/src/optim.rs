//! AdamW, plain SGD, and a linear warm-up/decay learning-rate schedule.

use crate::error::Result;
use crate::matrix::Matrix;

/// Linear warm-up over the first `ceil(warmup_ratio * total)` steps, then
/// linear decay. `factor(t)` is the multiplier for 1-based step `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LinearSchedule {
    pub fn new(total_steps: usize, warmup_ratio: f64) -> Self {
        let warmup_steps = ((warmup_ratio * total_steps as f64).ceil() as usize).min(total_steps);
        LinearSchedule {
            total_steps,
            warmup_steps,
        }
    }

    pub fn factor(&self, step: usize) -> f64 {
        let t = step.max(1);
        if t <= self.warmup_steps {
            t as f64 / self.warmup_steps as f64
        } else {
            let remaining = self.total_steps.saturating_sub(t) + 1;
            remaining as f64 / (self.total_steps - self.warmup_steps + 1) as f64
        }
    }
}

/// Adam with decoupled weight decay, one moment pair per tensor.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    t: u32,
}

impl AdamW {
    pub fn new(shapes: &[(usize, usize)], weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            first: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            t: 0,
        }
    }

    /// One update of every tensor. `params` and `grads` follow the order of
    /// the shapes given at construction.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix], lr: f64) -> Result<()> {
        assert_eq!(params.len(), self.first.len(), "tensor count changed");
        assert_eq!(grads.len(), self.first.len(), "tensor count changed");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[k].as_mut_slice();
            let v = self.second[k].as_mut_slice();
            let gs = g.as_slice();
            if gs.len() != m.len() || p.as_slice().len() != m.len() {
                return Err(crate::Error::DimensionMismatch {
                    op: "adamw step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            for (i, w) in p.as_mut_slice().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gs[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gs[i] * gs[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
        Ok(())
    }
}

/// `p -= lr * g`.
pub fn sgd_step(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    param.axpy(-lr, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LinearSchedule::new(100, 0.06);
        assert_eq!(s.warmup_steps, 6);
        assert!((s.factor(1) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.factor(6), 1.0);
        assert_eq!(s.factor(7), 94.0 / 95.0);
        assert_eq!(s.factor(100), 1.0 / 95.0);
        assert!((1..100).all(|t| s.factor(t + 1) <= s.factor(t) || t < 6));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Matrix::from_rows(&[&[1.0, -2.0]]).unwrap();
        let g = Matrix::from_rows(&[&[0.3, -5.0]]).unwrap();
        let mut opt = AdamW::new(&[(1, 2)], 0.0);
        opt.step(&mut [&mut p], &[&g], 0.1).unwrap();
        assert!((p[(0, 0)] - 0.9).abs() < 1e-6);
        assert!((p[(0, 1)] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Matrix::from_rows(&[&[3.0, -4.0]]).unwrap();
        let mut opt = AdamW::new(&[(1, 2)], 0.0);
        for _ in 0..2000 {
            let g = p.scale(2.0);
            opt.step(&mut [&mut p], &[&g], 0.01).unwrap();
        }
        assert!(p.max_abs() < 1e-2, "{p:?}");
    }

    #[test]
    fn sgd_step_is_axpy() {
        let mut p = Matrix::filled(2, 2, 1.0);
        sgd_step(&mut p, &Matrix::filled(2, 2, 4.0), 0.25).unwrap();
        assert_eq!(p, Matrix::zeros(2, 2));
    }
}
