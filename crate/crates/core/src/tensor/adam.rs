use super::Tensor;
use crate::error::{DestError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    state: AdamState,
    shapes: Vec<Vec<usize>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            state: AdamState {
                step: 0,
                first_moment: zeros.clone(),
                second_moment: zeros,
                lr,
                beta1,
                beta2,
                eps,
            },
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.state.lr = lr;
    }

    /// One update over every tensor flagged `requires_grad`. The gradient
    /// buffers are left in place; callers clear them between steps.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if params.len() != self.shapes.len() {
            return Err(DestError::Invariant(format!(
                "optimizer tracks {} tensors, got {}",
                self.shapes.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != self.shapes[i].as_slice() {
                return Err(DestError::Invariant(format!(
                    "parameter {i} changed shape from {:?} to {:?}",
                    self.shapes[i],
                    p.shape()
                )));
            }
            if p.requires_grad() && p.grad().is_none() {
                return Err(DestError::Invariant(format!(
                    "parameter {i} has no gradient"
                )));
            }
        }
        let s = &mut self.state;
        s.step += 1;
        let bc1 = 1.0 - s.beta1.powi(s.step as i32);
        let bc2 = 1.0 - s.beta2.powi(s.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if !p.requires_grad() {
                continue;
            }
            let g = p.grad().expect("checked above").to_vec();
            let m = &mut s.first_moment[i];
            let v = &mut s.second_moment[i];
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
                v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= s.lr * m_hat / (v_hat.sqrt() + s.eps);
            }
        }
        Ok(())
    }
}
