use std::f64::consts::PI;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// SGD with Nesterov momentum and classical L2 weight decay.
#[derive(Clone, Debug)]
pub struct SgdState {
    buffers: Vec<Vec<f64>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdState {
    pub fn new(params: &[Tensor], momentum: f64, weight_decay: f64) -> Self {
        SgdState {
            buffers: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            momentum,
            weight_decay,
        }
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    /// One update per parameter, then clears the gradients:
    ///
    /// ```text
    /// g   = grad + weight_decay·p
    /// buf = momentum·buf + g
    /// p  -= lr·(g + momentum·buf)
    /// ```
    pub fn step(&mut self, params: &mut [Tensor], lr: f64) -> Result<()> {
        if params.len() != self.buffers.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} tensors, got {}",
                self.buffers.len(),
                params.len()
            )));
        }
        for (i, (p, buf)) in params.iter().zip(&self.buffers).enumerate() {
            if p.numel() != buf.len() {
                return Err(Error::State(format!("tensor {i} changed size")));
            }
            if p.grad.is_none() {
                return Err(Error::State(format!("tensor {i} has no gradient")));
            }
        }
        let (mu, wd) = (self.momentum, self.weight_decay);
        for (p, buf) in params.iter_mut().zip(&mut self.buffers) {
            let grad = p.grad.take().expect("checked above");
            for ((w, b), g) in p.values_mut().iter_mut().zip(buf.iter_mut()).zip(grad) {
                let g = g + wd * *w;
                *b = mu * *b + g;
                *w -= lr * (g + mu * *b);
            }
        }
        Ok(())
    }
}

/// `γ₀·(0.5 + cos((t−1)·π/N))`, clamped below at zero. `t` counts from 1.
pub fn cosine_lr(t: usize, n_total: usize, gamma0: f64) -> f64 {
    debug_assert!(t >= 1 && n_total >= 1);
    let phase = (t.saturating_sub(1)) as f64 * PI / n_total.max(1) as f64;
    (gamma0 * (0.5 + phase.cos())).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: Option<f64>) -> Tensor {
        let mut t = Tensor::scalar(v);
        t.grad = g.map(|g| vec![g]);
        t
    }

    #[test]
    fn vanilla_limit() {
        let mut p = vec![param(1.0, Some(0.5))];
        let mut s = SgdState::new(&p, 0.0, 0.0);
        s.step(&mut p, 0.1).unwrap();
        assert_eq!(p[0].item(), 1.0 - 0.1 * 0.5);
        assert!(p[0].grad.is_none());
    }

    #[test]
    fn zero_lr_moves_buffers_only() {
        let mut p = vec![param(1.0, Some(2.0))];
        let mut s = SgdState::new(&p, 0.9, 0.0);
        s.step(&mut p, 0.0).unwrap();
        assert_eq!(p[0].item(), 1.0);
        assert_eq!(s.buffers()[0], vec![2.0]);
    }

    #[test]
    fn nesterov_hand_unroll_on_square() {
        // f(w) = w², w₀ = 1, lr 0.1, μ 0.9
        // step 1: g=2,    buf=2,    w = 1    − 0.1·(2    + 1.8)   = 0.62
        // step 2: g=1.24, buf=3.04, w = 0.62 − 0.1·(1.24 + 2.736) = 0.2224
        let mut p = vec![param(1.0, None)];
        let mut s = SgdState::new(&p, 0.9, 0.0);
        for expected in [0.62, 0.2224] {
            let w = p[0].item();
            p[0].grad = Some(vec![2.0 * w]);
            s.step(&mut p, 0.1).unwrap();
            assert!((p[0].item() - expected).abs() < 1e-15, "{}", p[0].item());
        }
    }

    #[test]
    fn weight_decay_adds_to_gradient() {
        let mut p = vec![param(2.0, Some(0.0))];
        let mut s = SgdState::new(&p, 0.0, 0.5);
        s.step(&mut p, 0.1).unwrap();
        assert_eq!(p[0].item(), 2.0 - 0.1 * 1.0);
    }

    #[test]
    fn missing_grad_is_state_error() {
        let mut p = vec![param(1.0, None)];
        let mut s = SgdState::new(&p, 0.9, 0.0);
        assert!(matches!(s.step(&mut p, 0.1), Err(Error::State(_))));
    }

    #[test]
    fn cosine_lr_examples() {
        let g0 = 0.1;
        assert_eq!(cosine_lr(1, 100, g0), 1.5 * g0);
        assert!((cosine_lr(51, 100, g0) - 0.5 * g0).abs() < 1e-15);
        assert_eq!(cosine_lr(101, 100, g0), 0.0);
    }

    #[test]
    fn cosine_lr_nonnegative_nonincreasing() {
        for n in [1, 7, 100, 1234] {
            let mut prev = f64::INFINITY;
            for t in 1..=n + 1 {
                let lr = cosine_lr(t, n, 0.3);
                assert!(lr >= 0.0 && lr <= prev);
                prev = lr;
            }
        }
    }
}
