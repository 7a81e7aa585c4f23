//! Projection heads applied to the pooled representation before scoring.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{relu, Architecture, BatchNorm, BatchNormCache, Matrix, Mlp, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// No projection: scores are computed on the base representation.
    Dot,
    /// One affine layer.
    Linear,
    /// MLP with one hidden layer.
    Nonlinear,
    /// MLP with two hidden layers.
    NonlinearDeep1,
    /// MLP with three hidden layers.
    NonlinearDeep2,
}

impl CriticKind {
    pub const ALL: [CriticKind; 5] = [
        CriticKind::Dot,
        CriticKind::Linear,
        CriticKind::Nonlinear,
        CriticKind::NonlinearDeep1,
        CriticKind::NonlinearDeep2,
    ];

    pub fn hidden_layers(self) -> Option<usize> {
        match self {
            CriticKind::Dot => None,
            CriticKind::Linear => Some(0),
            CriticKind::Nonlinear => Some(1),
            CriticKind::NonlinearDeep1 => Some(2),
            CriticKind::NonlinearDeep2 => Some(3),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CriticKind::Dot => "dot",
            CriticKind::Linear => "linear",
            CriticKind::Nonlinear => "nonlinear",
            CriticKind::NonlinearDeep1 => "nonlinear_deep1",
            CriticKind::NonlinearDeep2 => "nonlinear_deep2",
        }
    }
}

impl fmt::Display for CriticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CriticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CriticKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown critic kind {s:?}")))
    }
}

/// Batch statistics (training) or running statistics (evaluation) for batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub kind: CriticKind,
    pub batch_norm: bool,
    /// `None` for the dot critic.
    pub mlp: Option<Mlp>,
    /// One per hidden layer when `batch_norm` is set.
    pub norms: Vec<BatchNorm>,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    inputs: Vec<Matrix>,
    /// Value fed to the ReLU of each hidden layer (after batch norm, if any).
    activations_in: Vec<Matrix>,
    bn: Vec<BatchNormCache>,
    mode: CriticMode,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(kind: CriticKind, dim: usize, batch_norm: bool, rng: &mut R) -> Self {
        let mlp = kind.hidden_layers().map(|h| Mlp::new(&Self::arch(dim, h), rng));
        Self::assemble(kind, dim, batch_norm, mlp)
    }

    pub fn zeros(kind: CriticKind, dim: usize, batch_norm: bool) -> Self {
        let mlp = kind.hidden_layers().map(|h| Mlp::zeros(&Self::arch(dim, h)));
        Self::assemble(kind, dim, batch_norm, mlp)
    }

    fn arch(dim: usize, hidden: usize) -> Architecture {
        Architecture::new(vec![dim; hidden + 2]).expect("non-zero widths")
    }

    fn assemble(kind: CriticKind, dim: usize, batch_norm: bool, mlp: Option<Mlp>) -> Self {
        let hidden = kind.hidden_layers().unwrap_or(0);
        let batch_norm = batch_norm && hidden > 0;
        let norms = if batch_norm {
            (0..hidden).map(|_| BatchNorm::new(dim)).collect()
        } else {
            Vec::new()
        };
        Self {
            kind,
            batch_norm,
            mlp,
            norms,
        }
    }

    pub fn architecture(&self) -> Option<Architecture> {
        self.mlp.as_ref().map(Mlp::architecture)
    }

    pub fn forward(&self, x: &Matrix, mode: CriticMode) -> Result<(Matrix, CriticCache)> {
        let mut cache = CriticCache {
            inputs: Vec::new(),
            activations_in: Vec::new(),
            bn: Vec::new(),
            mode,
        };
        let Some(mlp) = &self.mlp else {
            return Ok((x.clone(), cache));
        };
        if x.cols() != mlp.input_dim() {
            return Err(Error::config(format!(
                "critic expects {} inputs, got {}",
                mlp.input_dim(),
                x.cols()
            )));
        }
        let last = mlp.layers().len() - 1;
        let mut a = x.clone();
        for (i, layer) in mlp.layers().iter().enumerate() {
            let mut z = layer.forward(&a);
            cache.inputs.push(a);
            if i == last {
                a = z;
                break;
            }
            if self.batch_norm {
                z = match mode {
                    CriticMode::Train => {
                        let (y, bn_cache) = self.norms[i].forward_train(&z);
                        cache.bn.push(bn_cache);
                        y
                    }
                    CriticMode::Eval => self.norms[i].forward_eval(&z),
                };
            }
            a = z.map(relu);
            cache.activations_in.push(z);
        }
        Ok((a, cache))
    }

    pub fn backward(&self, cache: &CriticCache, dy: &Matrix) -> Result<(Critic, Matrix)> {
        let mut grad = self.zeros_like();
        let Some(mlp) = &self.mlp else {
            return Ok((grad, dy.clone()));
        };
        if cache.inputs.len() != mlp.layers().len() {
            return Err(Error::Internal("critic cache does not match the network".into()));
        }
        if self.batch_norm && cache.mode != CriticMode::Train {
            return Err(Error::Internal(
                "backward through batch norm needs a training-mode cache".into(),
            ));
        }
        let grad_mlp = grad.mlp.as_mut().unwrap();
        let last = mlp.layers().len() - 1;
        let mut delta = dy.clone();
        for i in (0..mlp.layers().len()).rev() {
            if i != last {
                for (d, z) in delta.data_mut().iter_mut().zip(cache.activations_in[i].data()) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
                if self.batch_norm {
                    let (g_bn, dz) = self.norms[i].backward(&cache.bn[i], &delta);
                    grad.norms[i] = g_bn;
                    delta = dz;
                }
            }
            let (g, dx) = mlp.layers()[i].backward(&cache.inputs[i], &delta);
            grad_mlp.layers_mut()[i] = g;
            delta = dx;
        }
        Ok((grad, delta))
    }

    /// Folds the batch statistics of a training forward pass into the running estimates.
    pub fn update_running(&mut self, cache: &CriticCache) {
        for (bn, c) in self.norms.iter_mut().zip(&cache.bn) {
            bn.update_running(c);
        }
    }

    /// Running statistics, flattened (empty without batch norm).
    pub fn buffers(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for bn in &self.norms {
            out.extend_from_slice(&bn.running_mean);
            out.extend_from_slice(&bn.running_var);
        }
        out
    }

    pub fn buffer_len(&self) -> usize {
        self.norms.iter().map(|b| 2 * b.dim()).sum()
    }

    pub fn assign_buffers(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.buffer_len() {
            return Err(Error::Internal("critic buffer length mismatch".into()));
        }
        let mut off = 0;
        for bn in &mut self.norms {
            let d = bn.dim();
            bn.running_mean.copy_from_slice(&flat[off..off + d]);
            bn.running_var.copy_from_slice(&flat[off + d..off + 2 * d]);
            off += 2 * d;
        }
        Ok(())
    }
}

impl Parameters for Critic {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.mlp.as_ref().map(|m| m.tensors()).unwrap_or_default();
        for bn in &self.norms {
            out.extend(bn.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.mlp.as_mut().map(|m| m.tensors_mut()).unwrap_or_default();
        for bn in &mut self.norms {
            out.extend(bn.tensors_mut());
        }
        out
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .mlp
            .as_ref()
            .map(|m| m.tensor_names().into_iter().map(|n| format!("rho.{n}")).collect())
            .unwrap_or_default();
        for (i, bn) in self.norms.iter().enumerate() {
            out.extend(bn.tensor_names().into_iter().map(|n| format!("rho.bn{i}.{n}")));
        }
        out
    }

    fn zeros_like(&self) -> Self {
        Critic {
            kind: self.kind,
            batch_norm: self.batch_norm,
            mlp: self.mlp.as_ref().map(Mlp::zeros_like),
            norms: self.norms.iter().map(BatchNorm::zeros_like).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kinds_parse_and_have_expected_depth() {
        for k in CriticKind::ALL {
            assert_eq!(k.as_str().parse::<CriticKind>().unwrap(), k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Critic::new(CriticKind::Dot, 4, false, &mut rng).mlp.is_none());
        for (k, layers) in [
            (CriticKind::Linear, 1),
            (CriticKind::Nonlinear, 2),
            (CriticKind::NonlinearDeep1, 3),
            (CriticKind::NonlinearDeep2, 4),
        ] {
            let c = Critic::new(k, 4, true, &mut rng);
            assert_eq!(c.mlp.as_ref().unwrap().layers().len(), layers);
            assert_eq!(c.norms.len(), layers - 1);
        }
    }

    #[test]
    fn gradients_with_and_without_batch_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bn in [false, true] {
            for kind in [CriticKind::Linear, CriticKind::Nonlinear, CriticKind::NonlinearDeep2] {
                let critic = Critic::new(kind, 5, bn, &mut rng);
                let x = Matrix::from_fn(6, 5, |_, _| rng.random_range(-1.0..1.0));
                let w = Matrix::from_fn(6, 5, |_, _| rng.random_range(-1.0..1.0));
                let loss = |c: &Critic, x: &Matrix| -> f64 {
                    let (y, _) = c.forward(x, CriticMode::Train).unwrap();
                    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
                };
                let (_, cache) = critic.forward(&x, CriticMode::Train).unwrap();
                let (g, dx) = critic.backward(&cache, &w).unwrap();
                let mut probe = critic.clone();
                let r = grad_check(
                    |p| {
                        probe.assign_flat(p).unwrap();
                        loss(&probe, &x)
                    },
                    &critic.flatten(),
                    &g.flatten(),
                    1e-6,
                );
                assert!(r.passes(1e-4), "{kind} bn={bn}: {r:?}");
                let r = grad_check(
                    |xs| loss(&critic, &Matrix::from_vec(6, 5, xs.to_vec()).unwrap()),
                    x.data(),
                    dx.data(),
                    1e-6,
                );
                assert!(r.passes(1e-4), "{kind} bn={bn}: {r:?}");
            }
        }
    }
}
