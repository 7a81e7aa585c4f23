use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A finite set of `(x, y)` observations of one function.
///
/// Stored as two flat row-major buffers. Consumers treat it as a set: nothing
/// downstream may depend on the pair order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    x_dim: usize,
    y_dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl ContextSet {
    pub fn new(x_dim: usize, y_dim: usize) -> Self {
        Self {
            x_dim,
            y_dim,
            xs: Vec::new(),
            ys: Vec::new(),
        }
    }

    pub fn with_capacity(x_dim: usize, y_dim: usize, n: usize) -> Self {
        Self {
            x_dim,
            y_dim,
            xs: Vec::with_capacity(n * x_dim),
            ys: Vec::with_capacity(n * y_dim),
        }
    }

    pub fn from_pairs(x_dim: usize, y_dim: usize, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let mut set = Self::with_capacity(x_dim, y_dim, pairs.len());
        for (x, y) in pairs {
            if x.len() != x_dim || y.len() != y_dim {
                return Err(Error::config(format!(
                    "pair has dims ({}, {}), expected ({x_dim}, {y_dim})",
                    x.len(),
                    y.len()
                )));
            }
            set.push(x, y);
        }
        Ok(set)
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.x_dim);
        debug_assert_eq!(y.len(), self.y_dim);
        self.xs.extend_from_slice(x);
        self.ys.extend_from_slice(y);
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn len(&self) -> usize {
        self.xs
            .len()
            .checked_div(self.x_dim)
            .unwrap_or_else(|| self.ys.len() / self.y_dim.max(1))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.x_dim..(i + 1) * self.x_dim]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.y_dim..(i + 1) * self.y_dim]
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &[f64])> + '_ {
        (0..self.len()).map(move |i| (self.x(i), self.y(i)))
    }

    pub fn subset(&self, indices: &[usize]) -> ContextSet {
        let mut out = ContextSet::with_capacity(self.x_dim, self.y_dim, indices.len());
        for &i in indices {
            out.push(self.x(i), self.y(i));
        }
        out
    }

    /// Rows of concatenated `[x | y]`, the pointwise encoder input.
    pub fn pair_matrix(&self) -> Matrix {
        let w = self.x_dim + self.y_dim;
        let mut data = Vec::with_capacity(self.len() * w);
        for (x, y) in self.iter() {
            data.extend_from_slice(x);
            data.extend_from_slice(y);
        }
        Matrix::from_vec(self.len(), w, data).expect("consistent buffer sizes")
    }

    pub fn x_matrix(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.x_dim, self.xs.clone()).expect("consistent buffer sizes")
    }

    /// Checks the set invariants: non-empty and all coordinates finite.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data("context set is empty".into()));
        }
        if !self.xs.iter().chain(&self.ys).all(|v| v.is_finite()) {
            return Err(Error::Data("context set holds non-finite values".into()));
        }
        Ok(())
    }
}
