//! Hyperparameters and minibatch bookkeeping shared by the contrastive and CNP trainers.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{stream_rng, tag, ContextBounds};
use crate::encoder::CriticKind;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Functions per minibatch (the number of candidates in each softmax).
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    pub d_repr: usize,
    /// Disjoint subsets each context is split into.
    pub j_subsets: usize,
    pub temperature: f64,
    pub critic: CriticKind,
    pub critic_batch_norm: bool,
    pub bounds: ContextBounds,
    /// Standard deviation of the Gaussian noise added to training observations.
    pub noise_sigma: f64,
}

impl TrainConfig {
    pub fn sinusoid() -> Self {
        Self {
            batch_size: 256,
            epochs: 30,
            lr: 3e-4,
            adam: AdamConfig::default(),
            schedule: Schedule::Cosine,
            d_repr: 50,
            j_subsets: 2,
            temperature: 0.07,
            critic: CriticKind::Nonlinear,
            critic_batch_norm: false,
            bounds: ContextBounds::sinusoid(),
            noise_sigma: 0.0,
        }
    }

    pub fn mnist() -> Self {
        Self {
            batch_size: 16,
            epochs: 100,
            lr: 6e-4,
            adam: AdamConfig::default(),
            schedule: Schedule::Cosine,
            d_repr: 128,
            j_subsets: 10,
            temperature: 0.007,
            critic: CriticKind::Nonlinear,
            critic_batch_norm: false,
            bounds: ContextBounds::image(),
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: String| Err(Error::config(format!("{field}: {why}")));
        if self.batch_size < 2 {
            return fail("batch_size", format!("must be at least 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return fail("epochs", "must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", format!("must be positive and finite, got {}", self.lr));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature", format!("must be positive, got {}", self.temperature));
        }
        if self.d_repr == 0 {
            return fail("d_repr", "must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma", format!("must be non-negative, got {}", self.noise_sigma));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return fail("adam", "betas must lie in [0, 1) and eps must be positive".into());
        }
        let b = &self.bounds;
        if b.n_context_min < 1 || b.n_context_min > b.n_context_max || b.n_context_max > b.max_total {
            return fail(
                "bounds",
                format!(
                    "need 1 ≤ n_context_min ≤ n_context_max ≤ max_total, got {} / {} / {}",
                    b.n_context_min, b.n_context_max, b.max_total
                ),
            );
        }
        if self.j_subsets < 2 {
            return fail("j_subsets", format!("must be at least 2, got {}", self.j_subsets));
        }
        if self.j_subsets > b.n_context_max {
            return fail(
                "j_subsets",
                format!(
                    "J = {} cannot divide any context size up to n_context_max = {}",
                    self.j_subsets, b.n_context_max
                ),
            );
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, num_functions: usize) -> usize {
        epoch_batches(num_functions, self.batch_size, 0, 0).len()
    }
}

/// One point of a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Function indices of every minibatch in one epoch.
///
/// The order is a seeded shuffle; a trailing partial batch is kept when it has
/// at least two functions.
pub fn epoch_batches(num_functions: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..num_functions).collect();
    order.shuffle(&mut stream_rng(seed, &[tag("epoch-order"), epoch as u64]));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Mean loss of the last `window` curve points.
pub fn tail_mean(curve: &[CurvePoint], window: usize) -> f64 {
    let w = window.min(curve.len()).max(1);
    curve[curve.len().saturating_sub(w)..].iter().map(|p| p.loss).sum::<f64>() / w as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::sinusoid().validate().unwrap();
        TrainConfig::mnist().validate().unwrap();
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut c = TrainConfig::sinusoid();
        c.temperature = -1.0;
        assert!(c.validate().unwrap_err().to_string().contains("temperature"));
        let mut c = TrainConfig::sinusoid();
        c.j_subsets = 40;
        assert!(c.validate().unwrap_err().to_string().contains("j_subsets"));
    }

    #[test]
    fn batches_cover_each_function_once() {
        let batches = epoch_batches(1000, 256, 3, 1);
        assert_eq!(batches.len(), 4);
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_ne!(epoch_batches(1000, 256, 3, 2), batches);
        assert_eq!(epoch_batches(1000, 256, 3, 1), batches);
        assert_eq!(epoch_batches(257, 256, 0, 0).len(), 1);
    }
}
