//! Finite-difference checks of every trainable objective, run on small
//! random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cnp::{CnpBatch, CnpParams, CnpSpec};
use crate::contrastive::{contrastive_step, fcrl_loss, split_observations};
use crate::data::{sample_sinusoid, ContextSet, FunctionInstance, SinusoidFamily};
use crate::downstream::{probe_loss, LinearProbe, ProbeLabels, ProbeTarget};
use crate::encoder::{CriticKind, EncoderParams, EncoderSpec, SetBatch};
use crate::numerics::{grad_check, GaussianHead, GradCheckReport, Matrix, Parameters};
use crate::Result;

pub const GRAD_CHECK_PERTURBATION: f64 = 1e-6;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub checked: usize,
}

impl GradientCheck {
    fn from_report(name: impl Into<String>, r: &GradCheckReport) -> Self {
        Self {
            name: name.into(),
            max_relative_error: r.max_relative_error,
            checked: r.checked,
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error < tol
    }
}

fn sinusoids(n: usize, rng: &mut ChaCha8Rng) -> Vec<FunctionInstance> {
    (0..n).map(|i| sample_sinusoid(&SinusoidFamily::default(), i, rng)).collect()
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn check_params<P: Parameters + Clone>(
    name: &str,
    params: &P,
    grads: &P,
    mut loss: impl FnMut(&P) -> Result<f64>,
) -> Result<GradientCheck> {
    let mut scratch = params.clone();
    let mut failure = None;
    let r = grad_check(
        |p| {
            scratch.assign_flat(p).expect("flat length matches");
            loss(&scratch).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &params.flatten(),
        &grads.flatten(),
        GRAD_CHECK_PERTURBATION,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(GradientCheck::from_report(name, &r)),
    }
}

fn fcrl_loss_check(rng: &mut ChaCha8Rng) -> Result<Vec<GradientCheck>> {
    let mut out = Vec::new();
    for (k, j, tau) in [(4, 2, 0.5), (3, 4, 0.1)] {
        let reps = uniform(k * j, 6, rng);
        let grad = fcrl_loss(&reps, k, j, tau)?.grad;
        let r = grad_check(
            |p| {
                let m = Matrix::from_vec(k * j, 6, p.to_vec()).expect("shape");
                fcrl_loss(&m, k, j, tau).map_or(f64::NAN, |o| o.loss)
            },
            reps.data(),
            grad.data(),
            GRAD_CHECK_PERTURBATION,
        );
        out.push(GradientCheck::from_report(format!("fcrl-loss K={k} J={j} tau={tau}"), &r));
    }
    Ok(out)
}

fn encoder_checks(rng: &mut ChaCha8Rng) -> Result<Vec<GradientCheck>> {
    let fns = sinusoids(4, rng);
    let mut subsets: Vec<ContextSet> = Vec::new();
    for f in &fns {
        let ctx = f.sample_context(8, 0.0, rng)?;
        subsets.extend(split_observations(&ctx, 2, rng)?);
    }
    let batch = SetBatch::from_sets(&subsets)?;
    let mut out = Vec::new();
    for critic in [CriticKind::Dot, CriticKind::Linear, CriticKind::Nonlinear] {
        for bn in [false, true] {
            let spec = EncoderSpec {
                x_dim: 1,
                y_dim: 1,
                d_repr: 8,
                critic,
                critic_batch_norm: bn,
            };
            let params = EncoderParams::new(spec, rng);
            let (_, grads, _) = contrastive_step(&params, &batch, 2, 0.5)?;
            let name = format!("encoder critic={critic} batch-norm={bn}");
            out.push(check_params(&name, &params, &grads, |p| {
                Ok(contrastive_step(p, &batch, 2, 0.5)?.0)
            })?);
        }
    }
    Ok(out)
}

fn cnp_check(rng: &mut ChaCha8Rng) -> Result<GradientCheck> {
    let spec = CnpSpec {
        x_dim: 1,
        y_dim: 1,
        d_repr: 8,
        decoder_hidden: 8,
    };
    let params = CnpParams::new(spec, rng);
    let pairs = sinusoids(3, rng)
        .iter()
        .map(|f| f.sample_context_target(4, 3, 0.1, rng))
        .collect::<Result<Vec<_>>>()?;
    let batch = CnpBatch::new(&pairs)?;
    let (_, grads) = params.loss_and_grads(&batch)?;
    check_params("cnp-nll", &params, &grads, |p| Ok(p.loss_and_grads(&batch)?.0))
}

fn gaussian_head_check(name: &str, input_dim: usize, rng: &mut ChaCha8Rng) -> Result<GradientCheck> {
    let head = GaussianHead::new(input_dim, &[8, 8], 1, rng);
    let x = uniform(5, input_dim, rng);
    let y = uniform(5, 1, rng);
    let (_, grads, _) = head.loss_and_grads(&x, &y)?;
    check_params(name, &head, &grads, |h| Ok(h.loss_and_grads(&x, &y)?.0))
}

fn probe_check(name: &str, target: ProbeTarget, labels: ProbeLabels, rng: &mut ChaCha8Rng) -> Result<GradientCheck> {
    let outputs = match &labels {
        ProbeLabels::Regression(y) => y.cols(),
        ProbeLabels::Classes(_) => 10,
    };
    let probe = LinearProbe::random(8, outputs, target, rng);
    let x = uniform(6, 8, rng);
    let rows: Vec<usize> = (0..6).collect();
    let (out, cache) = probe.net.forward(&x)?;
    let (_, dout) = probe_loss(&out, &labels, &rows)?;
    let (grads, _) = probe.net.backward(&cache, &dout)?;
    check_params(name, &probe.net, &grads, |net| {
        let (out, _) = net.forward(&x)?;
        Ok(probe_loss(&out, &labels, &rows)?.0)
    })
}

/// Runs every check with parameters drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradientCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = fcrl_loss_check(&mut rng)?;
    out.extend(encoder_checks(&mut rng)?);
    out.push(cnp_check(&mut rng)?);
    out.push(gaussian_head_check("fsr-head", 1 + 8, &mut rng)?);
    out.push(gaussian_head_check("fsic-head", 2 + 8, &mut rng)?);
    let params = Matrix::from_fn(6, 2, |r, c| (r + 2 * c) as f64 * 0.2);
    out.push(probe_check("fspi-probe", ProbeTarget::SineParams, ProbeLabels::Regression(params), &mut rng)?);
    let classes = (0..6).map(|i| (i * 7) % 10).collect();
    out.push(probe_check("fscc-probe", ProbeTarget::DigitClass, ProbeLabels::Classes(classes), &mut rng)?);
    Ok(out)
}
