//! First-order optimizers. Every step leaves all gradients zeroed.

use crate::error::{Error, Result};
use crate::tensor::{Param, Tensor};

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_hyperparameters(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.shape() != p.value.shape())
        {
            return Err(Error::InvalidArgument(
                "Adam state does not match the parameter set it was created for".into(),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Param { value, grad } = &mut **p;
            for (((w, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * *g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
                *g = 0.0;
            }
        }
        Ok(())
    }
}

/// Plain gradient descent: `w <- w - lr * grad`.
pub fn sgd_step(lr: f64, params: &mut [&mut Param]) {
    for p in params.iter_mut() {
        let Param { value, grad } = &mut **p;
        for (w, g) in value.data_mut().iter_mut().zip(grad.data_mut()) {
            *w -= lr * *g;
            *g = 0.0;
        }
    }
}
