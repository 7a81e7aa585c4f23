//! Heteroscedastic Gaussian output layers and their negative log-likelihood.

use std::f64::consts::PI;

use rand::Rng;

use super::{Architecture, Matrix, Mlp, MlpCache, Parameters};
use crate::error::{Error, Result};

/// Lower bound added to every predicted variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean of `½·[log(2πσ²) + (y − μ)²/σ²]` over all entries.
pub fn gaussian_nll(mean: &[f64], var: &[f64], y: &[f64]) -> Result<f64> {
    if mean.len() != var.len() || mean.len() != y.len() || mean.is_empty() {
        return Err(Error::Internal("gaussian_nll: length mismatch or empty input".into()));
    }
    let mut total = 0.0;
    for ((&m, &v), &t) in mean.iter().zip(var).zip(y) {
        if !(v > 0.0) {
            return Err(Error::Internal(format!("non-positive predictive variance {v}")));
        }
        total += 0.5 * ((2.0 * PI * v).ln() + (t - m).powi(2) / v);
    }
    Ok(total / mean.len() as f64)
}

/// Gradients of [`gaussian_nll`] with respect to the mean and the variance.
pub fn gaussian_nll_grad(mean: &[f64], var: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = mean.len() as f64;
    let mut dm = Vec::with_capacity(mean.len());
    let mut dv = Vec::with_capacity(mean.len());
    for ((&m, &v), &t) in mean.iter().zip(var).zip(y) {
        let r = m - t;
        dm.push(r / v / n);
        dv.push(0.5 * (1.0 / v - r * r / (v * v)) / n);
    }
    (dm, dv)
}

/// An MLP whose `2·y_dim` outputs are read as `(μ, pre-variance)`, with
/// `σ² = softplus(pre) + VARIANCE_FLOOR`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub net: Mlp,
    pub y_dim: usize,
}

#[derive(Debug, Clone)]
pub struct GaussianPrediction {
    /// `[rows × y_dim]`.
    pub mean: Matrix,
    pub var: Matrix,
    /// Raw pre-variance outputs.
    pub pre_var: Matrix,
}

impl GaussianHead {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], y_dim: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(&Self::arch(input_dim, hidden, y_dim), rng),
            y_dim,
        }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], y_dim: usize) -> Self {
        Self {
            net: Mlp::zeros(&Self::arch(input_dim, hidden, y_dim)),
            y_dim,
        }
    }

    fn arch(input_dim: usize, hidden: &[usize], y_dim: usize) -> Architecture {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * y_dim);
        Architecture::new(dims).expect("non-zero widths")
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if !net.output_dim().is_multiple_of(2) {
            return Err(Error::config("a Gaussian head needs an even number of outputs"));
        }
        let y_dim = net.output_dim() / 2;
        Ok(Self { net, y_dim })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn split(&self, out: &Matrix) -> GaussianPrediction {
        let (mean, pre_var) = out.split_cols(self.y_dim);
        let var = pre_var.map(|p| softplus(p) + VARIANCE_FLOOR);
        GaussianPrediction { mean, var, pre_var }
    }

    pub fn predict(&self, inputs: &Matrix) -> Result<GaussianPrediction> {
        Ok(self.split(&self.net.predict(inputs)?))
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<(GaussianPrediction, MlpCache)> {
        let (out, cache) = self.net.forward(inputs)?;
        Ok((self.split(&out), cache))
    }

    /// NLL of `targets` (`[rows × y_dim]`) and its gradient with respect to the raw outputs.
    pub fn nll_and_output_grad(pred: &GaussianPrediction, targets: &Matrix) -> Result<(f64, Matrix)> {
        let nll = gaussian_nll(pred.mean.data(), pred.var.data(), targets.data())?;
        let (dm, dv) = gaussian_nll_grad(pred.mean.data(), pred.var.data(), targets.data());
        let dpre: Vec<f64> = dv.iter().zip(pred.pre_var.data()).map(|(g, &p)| g * sigmoid(p)).collect();
        let rows = targets.rows();
        let dm = Matrix::from_vec(rows, pred.mean.cols(), dm)?;
        let dpre = Matrix::from_vec(rows, pred.mean.cols(), dpre)?;
        Ok((nll, dm.hstack(&dpre)?))
    }

    /// NLL plus gradients for the head and for its inputs.
    pub fn loss_and_grads(&self, inputs: &Matrix, targets: &Matrix) -> Result<(f64, GaussianHead, Matrix)> {
        let (pred, cache) = self.forward(inputs)?;
        let (nll, dout) = Self::nll_and_output_grad(&pred, targets)?;
        let (g, dx) = self.net.backward(&cache, &dout)?;
        Ok((nll, GaussianHead { net: g, y_dim: self.y_dim }, dx))
    }
}

impl Parameters for GaussianHead {
    fn tensors(&self) -> Vec<&[f64]> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }

    fn tensor_names(&self) -> Vec<String> {
        self.net.tensor_names()
    }

    fn zeros_like(&self) -> Self {
        GaussianHead {
            net: self.net.zeros_like(),
            y_dim: self.y_dim,
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
    fn closed_form_values() {
        let nll = gaussian_nll(&[0.3], &[1.0 / (2.0 * PI)], &[0.3]).unwrap();
        assert!(nll.abs() < 1e-15);
        let nll = gaussian_nll(&[1.5], &[1.0], &[1.5]).unwrap();
        assert!((nll - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((nll - 0.9189).abs() < 1e-4);
    }

    #[test]
    fn matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let m: f64 = rng.random_range(-2.0..2.0);
            let v: f64 = rng.random_range(0.01..3.0);
            let y: f64 = rng.random_range(-2.0..2.0);
            let expected = -(-(y - m) * (y - m) / (2.0 * v)).exp().ln() + 0.5 * (2.0 * PI * v).ln();
            assert!((gaussian_nll(&[m], &[v], &[y]).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_positive_variance() {
        assert!(gaussian_nll(&[0.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn zero_head_predicts_bias_and_floor() {
        let head = GaussianHead::zeros(3, &[4, 4], 1);
        let p = head.predict(&Matrix::from_fn(5, 3, |r, c| (r * c) as f64)).unwrap();
        assert!(p.mean.data().iter().all(|&m| m == 0.0));
        assert!(p.var.data().iter().all(|&v| v == 2f64.ln() + VARIANCE_FLOOR));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = GaussianHead::new(3, &[6, 6], 1, &mut rng);
        let x = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = Matrix::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0));
        let (_, g, dx) = head.loss_and_grads(&x, &y).unwrap();
        let mut probe = head.clone();
        let r = grad_check(
            |p| {
                probe.assign_flat(p).unwrap();
                probe.loss_and_grads(&x, &y).unwrap().0
            },
            &head.flatten(),
            &g.flatten(),
            1e-6,
        );
        assert!(r.passes(1e-4), "{r:?}");
        let r = grad_check(
            |xs| head.loss_and_grads(&Matrix::from_vec(3, 3, xs.to_vec()).unwrap(), &y).unwrap().0,
            x.data(),
            dx.data(),
            1e-6,
        );
        assert!(r.passes(1e-4), "{r:?}");
    }
}
