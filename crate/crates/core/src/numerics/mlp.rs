//! Fully connected networks with ReLU hidden layers and a linear output layer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, Parameters};
use crate::error::{Error, Result};

/// Layer widths of an MLP, input first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Architecture(Vec<usize>);

impl Architecture {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config(format!(
                "architecture needs at least an input and an output width, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::config(format!("architecture has a zero width: {dims:?}")));
        }
        Ok(Self(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn input_dim(&self) -> usize {
        self.0[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.0.last().unwrap()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(" → "))
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let dims = s
            .replace("->", "→")
            .split('→')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad architecture string {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Architecture::new(dims)
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> String {
        a.to_string()
    }
}

/// Affine map `x ↦ x Wᵀ + b` applied to each row of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out × in]`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in ±√(6/in_dim), zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let weight = Matrix::from_fn(out_dim, in_dim, |_, _| rng.random_range(-bound..bound));
        Self {
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut z = x.matmul_nt(&self.weight);
        z.add_row_vector(&self.bias);
        z
    }

    /// Returns the parameter gradient (as a `Dense`) and the input gradient.
    pub fn backward(&self, x: &Matrix, dz: &Matrix) -> (Dense, Matrix) {
        let grad = Dense {
            weight: dz.matmul_tn(x),
            bias: dz.column_sums(),
        };
        (grad, dz.matmul(&self.weight))
    }
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each layer (layer 0's input is the network input).
    pub inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pub pre: Vec<Matrix>,
}

impl MlpCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let layers = arch
            .dims()
            .windows(2)
            .map(|w| Dense::he_uniform(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .dims()
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::config(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(Self { layers })
    }

    pub fn architecture(&self) -> Architecture {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Dense::out_dim));
        Architecture(dims)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::config(format!(
                "input has {} columns but the network ({}) expects {}",
                inputs.cols(),
                self.architecture(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.check_input(inputs)?;
        let last = self.layers.len() - 1;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = inputs.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&x);
            let a = if i == last { z.clone() } else { z.map(relu) };
            cache.inputs.push(x);
            cache.pre.push(z);
            x = a;
        }
        Ok((x, cache))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let last = self.layers.len() - 1;
        let mut x = inputs.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&x);
            if i != last {
                z.data_mut().iter_mut().for_each(|v| *v = relu(*v));
            }
            x = z;
        }
        Ok(x)
    }

    /// Returns parameter gradients (shaped like `self`) and the input gradient.
    pub fn backward(&self, cache: &MlpCache, output_grad: &Matrix) -> Result<(Mlp, Matrix)> {
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(Error::Internal(format!(
                "cache holds {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, x)) in self.layers.iter().zip(&cache.inputs).enumerate() {
            if x.cols() != layer.in_dim() || x.rows() != output_grad.rows() {
                return Err(Error::Internal(format!(
                    "stale cache at layer {i}: cached input {:?}, layer expects {} columns, gradient has {} rows",
                    x.shape(),
                    layer.in_dim(),
                    output_grad.rows()
                )));
            }
        }
        if output_grad.cols() != self.output_dim() {
            return Err(Error::Internal(format!(
                "output gradient has {} columns, network outputs {}",
                output_grad.cols(),
                self.output_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            if i != last {
                for (d, z) in delta.data_mut().iter_mut().zip(cache.pre[i].data()) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (g, dx) = self.layers[i].backward(&cache.inputs[i], &delta);
            grads.push(g);
            delta = dx;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, delta))
    }
}

#[inline]
pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    fn tensor_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    fn zeros_like(&self) -> Self {
        Mlp::zeros(&self.architecture())
    }
}
