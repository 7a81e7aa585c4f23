use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter set. Owned by a single trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    /// One bias-corrected Adam update. Parameters are left untouched when a
    /// gradient entry is not finite.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let grad_tensors = grads.tensors();
        if grad_tensors.len() != self.first_moment.len() {
            return Err(Error::Internal(format!(
                "optimizer tracks {} tensors, got {} gradients",
                self.first_moment.len(),
                grad_tensors.len()
            )));
        }
        for (ti, (g, m)) in grad_tensors.iter().zip(&self.first_moment).enumerate() {
            if g.len() != m.len() {
                return Err(Error::Internal(format!(
                    "gradient tensor {ti} has {} entries, optimizer expects {}",
                    g.len(),
                    m.len()
                )));
            }
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                let name = grads
                    .tensor_names()
                    .get(ti)
                    .cloned()
                    .unwrap_or_else(|| format!("tensor{ti}"));
                return Err(Error::Numerical(format!(
                    "non-finite gradient {} at {name}[{pos}] on optimizer step {}",
                    g[pos],
                    self.step_count + 1
                )));
            }
        }

        self.step_count += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Flat(Vec<f64>);

    impl Parameters for Flat {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
        fn tensor_names(&self) -> Vec<String> {
            vec!["flat".into()]
        }
        fn zeros_like(&self) -> Self {
            Flat(vec![0.0; self.0.len()])
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.7, -42.0] {
            let mut p = Flat(vec![1.0, -2.0]);
            let mut s = AdamState::new(&p, AdamConfig::default());
            s.step(&mut p, &Flat(vec![g, g]), 0.01).unwrap();
            for (new, old) in p.0.iter().zip([1.0, -2.0]) {
                let delta = old - new;
                // lr·g/(|g| + ε) differs from lr·sign(g) by lr·ε/(|g| + ε)
                assert!((delta - 0.01 * g.signum()).abs() <= 0.01 * 1e-8 / g.abs() + 1e-15);
            }
            assert_eq!(s.step_count, 1);
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = Flat(vec![0.5, 0.25, -1.0]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        for _ in 0..10 {
            s.step(&mut p, &Flat(vec![0.0; 3]), 0.1).unwrap();
        }
        assert_eq!(p.0, vec![0.5, 0.25, -1.0]);
        assert_eq!(s.step_count, 10);
    }

    #[test]
    fn matches_scalar_reference_trace() {
        // Hand-rolled scalar Adam, g = 1, lr = 0.1.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut trace = Vec::new();
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
            trace.push(theta);
        }
        let mut p = Flat(vec![0.0; 4]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        for expected in trace {
            s.step(&mut p, &Flat(vec![1.0; 4]), lr).unwrap();
            for x in &p.0 {
                assert!((x - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = Flat(vec![0.1, 0.2, 0.3]);
            let mut s = AdamState::new(&p, AdamConfig::default());
            for i in 0..5 {
                let g = Flat(vec![i as f64 * 0.3 - 0.5, 1.7, -0.01]);
                s.step(&mut p, &g, 1e-3).unwrap();
            }
            (p, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(sa, sb);
    }

    #[test]
    fn non_finite_gradient_aborts_with_path() {
        let mut p = Flat(vec![1.0, 2.0]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let err = s.step(&mut p, &Flat(vec![0.0, f64::NAN]), 0.1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("flat[1]") && msg.contains("step 1"), "{msg}");
        assert_eq!(p.0, vec![1.0, 2.0]);
        assert_eq!(s.step_count, 0);
    }
}
