//! First-order optimizers over parameter tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub trait Optimizer {
    /// Applies one update from the gradients currently stored on `params`.
    fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()>;
}

fn grad_of(i: usize, p: &Tensor) -> Result<&[f32]> {
    p.grad().ok_or_else(|| Error::Usage(format!("parameter {i} has no gradient; run backward first")))
}

/// Plain gradient descent.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f32,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        for (i, p) in params.iter_mut().enumerate() {
            let g = grad_of(i, p)?.to_vec();
            p.data_mut().iter_mut().zip(&g).for_each(|(w, g)| *w -= self.lr * g);
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step_count: i32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step_count
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::Usage(format!(
                "optimizer state tracks {} tensors, got {}",
                self.first.len(),
                params.len()
            )));
        }
        // validate before mutating anything
        for (i, p) in params.iter().enumerate() {
            grad_of(i, p)?;
        }
        self.step_count += 1;
        let c1 = 1.0 - self.beta1.powi(self.step_count);
        let c2 = 1.0 - self.beta2.powi(self.step_count);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = p.grad().expect("checked above").to_vec();
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
