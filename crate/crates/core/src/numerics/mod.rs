//! Dense linear algebra, MLPs, batch normalization, Adam, the cosine learning
//! rate schedule and a finite-difference gradient checker.

mod adam;
mod batchnorm;
mod gaussian;
mod gradcheck;
mod matrix;
mod mlp;
mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNorm, BatchNormCache};
pub use gaussian::{
    gaussian_nll, gaussian_nll_grad, sigmoid, softplus, GaussianHead, GaussianPrediction, VARIANCE_FLOOR,
};
pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use matrix::Matrix;
pub use mlp::{relu, Architecture, Dense, Mlp, MlpCache};
pub use schedule::{cosine_lr, Schedule};

use crate::error::{Error, Result};

/// A model whose trainable state is a list of flat `f64` tensors.
///
/// Gradients are represented by the same type, so `zeros_like` doubles as the
/// gradient accumulator constructor.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Human-readable path of each tensor, aligned with `tensors`.
    fn tensor_names(&self) -> Vec<String>;
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(Error::Internal(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}
