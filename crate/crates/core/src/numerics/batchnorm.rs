//! Batch normalization over the rows of a matrix.

use super::{Matrix, Parameters};

const MOMENTUM: f64 = 0.1;
const EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Running statistics, used in evaluation mode. Not trained.
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased batch variance, folded into the running estimate.
    pub var_unbiased: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics.
    pub fn forward_train(&self, x: &Matrix) -> (Matrix, BatchNormCache) {
        let (n, d) = x.shape();
        let mean: Vec<f64> = x.column_sums().iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; d];
        for r in 0..n {
            for (c, v) in x.row(r).iter().enumerate() {
                var[c] += (v - mean[c]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + EPS).sqrt()).collect();
        let normalized = Matrix::from_fn(n, d, |r, c| (x.get(r, c) - mean[c]) * inv_std[c]);
        let out = Matrix::from_fn(n, d, |r, c| self.gamma[c] * normalized.get(r, c) + self.beta[c]);
        let correction = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
        let cache = BatchNormCache {
            normalized,
            inv_std,
            mean,
            var_unbiased: var.iter().map(|v| v * correction).collect(),
        };
        (out, cache)
    }

    /// Normalizes with running statistics.
    pub fn forward_eval(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            let xhat = (x.get(r, c) - self.running_mean[c]) / (self.running_var[c] + EPS).sqrt();
            self.gamma[c] * xhat + self.beta[c]
        })
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        for c in 0..self.dim() {
            self.running_mean[c] = (1.0 - MOMENTUM) * self.running_mean[c] + MOMENTUM * cache.mean[c];
            self.running_var[c] =
                (1.0 - MOMENTUM) * self.running_var[c] + MOMENTUM * cache.var_unbiased[c];
        }
    }

    /// Backward pass of the training-mode transform.
    pub fn backward(&self, cache: &BatchNormCache, dy: &Matrix) -> (BatchNorm, Matrix) {
        let (n, d) = dy.shape();
        let xhat = &cache.normalized;
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                dgamma[c] += dy.get(r, c) * xhat.get(r, c);
                dbeta[c] += dy.get(r, c);
            }
        }
        let nf = n as f64;
        // dx = γ/(n σ) · (n dy − Σdy − x̂ Σ(dy x̂))
        let dx = Matrix::from_fn(n, d, |r, c| {
            self.gamma[c] * cache.inv_std[c] / nf
                * (nf * dy.get(r, c) - dbeta[c] - xhat.get(r, c) * dgamma[c])
        });
        let grad = BatchNorm {
            gamma: dgamma,
            beta: dbeta,
            running_mean: vec![0.0; d],
            running_var: vec![0.0; d],
        };
        (grad, dx)
    }
}

impl Parameters for BatchNorm {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.gamma, &self.beta]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn tensor_names(&self) -> Vec<String> {
        vec!["gamma".into(), "beta".into()]
    }

    fn zeros_like(&self) -> Self {
        let d = self.dim();
        BatchNorm {
            gamma: vec![0.0; d],
            beta: vec![0.0; d],
            running_mean: vec![0.0; d],
            running_var: vec![0.0; d],
        }
    }
}
