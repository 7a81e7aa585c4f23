//! Few-shot evaluation protocols and metric records.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::probe::{check_pixel_count, image_labels};
use super::{DecoderHead, Task};
use crate::cnp::CnpParams;
use crate::data::{stream_rng, tag, ContextBounds, ContextSet, FunctionInstance, FunctionSource};
use crate::encoder::BaseEncoder;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::parallel::par_map;

/// Evaluation grid size for sinusoid regression.
pub const FSR_GRID_POINTS: usize = 100;

/// Functions handled by one parallel work item.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Context points given to the model.
    pub shots: usize,
    /// Leading test functions to evaluate; 0 means all.
    pub n_eval_functions: usize,
    pub noise_sigma: f64,
    pub seeds: Vec<u64>,
}

impl EvalSpec {
    pub fn new(shots: usize, n_eval_functions: usize, noise_sigma: f64, seeds: Vec<u64>) -> Self {
        Self {
            shots,
            n_eval_functions,
            noise_sigma,
            seeds,
        }
    }

    pub fn validate(&self, min_shots: usize, max_shots: usize) -> Result<()> {
        if self.shots < min_shots || self.shots > max_shots {
            return Err(Error::config(format!(
                "shots {} outside [{min_shots}, {max_shots}]",
                self.shots
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!("noise_sigma must be ≥ 0, got {}", self.noise_sigma)));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("evaluation needs at least one seed"));
        }
        Ok(())
    }

    fn count(&self, available: usize) -> usize {
        if self.n_eval_functions == 0 {
            available
        } else {
            self.n_eval_functions.min(available)
        }
    }
}

/// Run and model a metric row belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunLabel {
    pub run_id: String,
    pub model: String,
}

impl RunLabel {
    pub fn new(run_id: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            model: model.into(),
        }
    }
}

/// One row of a long-format metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub model: String,
    pub task: Task,
    pub shots: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub run_id: String,
    pub model: String,
    pub task: Task,
    pub shots: usize,
    pub noise_sigma: f64,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: f64,
    pub n: usize,
}

/// Mean and standard deviation over seeds, grouped by everything else, in first-seen order.
pub fn summarize(records: &[MetricsRecord]) -> Vec<MetricSummary> {
    let key = |r: &MetricsRecord| {
        (
            r.run_id.clone(),
            r.model.clone(),
            r.task,
            r.shots,
            r.noise_sigma.to_bits(),
            r.metric.clone(),
        )
    };
    let mut groups: Vec<(_, Vec<f64>)> = Vec::new();
    for r in records {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, vals)) => vals.push(r.value),
            None => groups.push((k, vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|((run_id, model, task, shots, sigma, metric), vals)| {
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            MetricSummary {
                run_id,
                model,
                task,
                shots,
                noise_sigma: f64::from_bits(sigma),
                metric,
                mean,
                std,
                n,
            }
        })
        .collect()
}

/// A model that predicts target means from a context.
pub trait ContextRegressor: Sync {
    /// Predictive means, one per row of `target_x` (single output dimension).
    fn predict_mean(&self, context: &ContextSet, target_x: &Matrix) -> Result<Vec<f64>>;
}

/// A Gaussian head reading a frozen encoder.
pub struct FrozenHead<'a, E: ?Sized> {
    pub head: &'a DecoderHead,
    pub encoder: &'a E,
}

impl<'a, E: BaseEncoder + ?Sized> FrozenHead<'a, E> {
    pub fn new(head: &'a DecoderHead, encoder: &'a E) -> Result<Self> {
        head.gaussian()?;
        head.check_encoder(encoder)?;
        Ok(Self { head, encoder })
    }
}

impl<E: BaseEncoder + ?Sized> ContextRegressor for FrozenHead<'_, E> {
    fn predict_mean(&self, context: &ContextSet, target_x: &Matrix) -> Result<Vec<f64>> {
        let repr = self.encoder.encode_base(context)?;
        Ok(self.head.predict_gaussian(&repr, target_x)?.mean.into_vec())
    }
}

impl ContextRegressor for CnpParams {
    fn predict_mean(&self, context: &ContextSet, target_x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.predict(context, target_x)?.mean.into_vec())
    }
}

/// Per-function scores for every seed, computed in parallel and merged in index order.
fn per_function_scores<S, F>(test: &S, spec: &EvalSpec, stream: &str, score: F) -> Result<Vec<(u64, Vec<f64>)>>
where
    S: FunctionSource + ?Sized,
    F: Fn(&[(usize, FunctionInstance, crate::data::DetRng)]) -> Result<Vec<f64>> + Sync,
{
    let n = spec.count(test.len());
    if n == 0 {
        return Err(Error::Data("no test functions to evaluate".into()));
    }
    let chunks: Vec<(usize, usize)> = (0..n).step_by(EVAL_CHUNK).map(|s| (s, (s + EVAL_CHUNK).min(n))).collect();
    let mut out = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let parts = par_map(&chunks, |&(lo, hi)| {
            let items: Vec<_> = (lo..hi)
                .map(|i| {
                    let rng = stream_rng(seed, &[tag(stream), spec.shots as u64, i as u64]);
                    (i, test.instance(i), rng)
                })
                .collect();
            score(&items)
        });
        let mut scores = Vec::with_capacity(n);
        for p in parts {
            scores.extend(p?);
        }
        out.push((seed, scores));
    }
    Ok(out)
}

fn records(
    label: &RunLabel,
    task: Task,
    spec: &EvalSpec,
    metric: &str,
    per_seed: Vec<(u64, Vec<f64>)>,
) -> Vec<MetricsRecord> {
    per_seed
        .into_iter()
        .map(|(seed, scores)| MetricsRecord {
            run_id: label.run_id.clone(),
            model: label.model.clone(),
            task,
            shots: spec.shots,
            noise_sigma: spec.noise_sigma,
            seed,
            metric: metric.into(),
            value: scores.iter().sum::<f64>() / scores.len() as f64,
        })
        .collect()
}

fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64
}

/// Evenly spaced points covering `[lo, hi]` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Sinusoid regression: `shots` noisy context points, MSE of the predicted mean
/// against noisy observations on a 100-point grid over the input range.
pub fn evaluate_fsr<S, M>(model: &M, test: &S, spec: &EvalSpec, label: &RunLabel) -> Result<Vec<MetricsRecord>>
where
    S: FunctionSource + ?Sized,
    M: ContextRegressor + ?Sized,
{
    let b = ContextBounds::sinusoid();
    spec.validate(b.n_context_min, b.n_context_max)?;
    let per_seed = per_function_scores(test, spec, "fsr-eval", |items| {
        items
            .iter()
            .map(|(_, inst, rng)| {
                let mut rng = rng.clone();
                let p = inst.sine().ok_or_else(|| Error::config("regression evaluation needs sinusoids"))?;
                let context = inst.sample_context(spec.shots, spec.noise_sigma, &mut rng)?;
                let xs = uniform_grid(p.x_range.0, p.x_range.1, FSR_GRID_POINTS);
                let truth: Vec<f64> = xs
                    .iter()
                    .map(|&x| p.eval(x) + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let pred = model.predict_mean(&context, &Matrix::from_vec(xs.len(), 1, xs)?)?;
                Ok(mse(&pred, &truth))
            })
            .collect()
    })?;
    Ok(records(label, Task::Fsr, spec, "mse", per_seed))
}

/// Which pixels an image-completion score is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelTargets {
    /// Every pixel not in the context.
    NonContext,
    /// All pixels, context included.
    All,
}

/// Image completion: pixel MSE of the predicted mean given `shots` context pixels.
pub fn evaluate_fsic<S, M>(
    model: &M,
    test: &S,
    spec: &EvalSpec,
    targets: PixelTargets,
    label: &RunLabel,
) -> Result<Vec<MetricsRecord>>
where
    S: FunctionSource + ?Sized,
    M: ContextRegressor + ?Sized,
{
    check_pixel_count(test, spec.shots)?;
    spec.validate(2, usize::MAX)?;
    let per_seed = per_function_scores(test, spec, "fsic-eval", |items| {
        items
            .iter()
            .map(|(_, inst, rng)| {
                let mut rng = rng.clone();
                let total = inst
                    .max_distinct_points()
                    .ok_or_else(|| Error::config("image completion needs an image dataset"))?;
                let (context, rest) = inst.sample_context_target(spec.shots, total - spec.shots, spec.noise_sigma, &mut rng)?;
                let mut tgt = match targets {
                    PixelTargets::NonContext => ContextSet::new(2, 1),
                    PixelTargets::All => context.clone(),
                };
                for (x, y) in rest.iter() {
                    tgt.push(x, y);
                }
                if tgt.is_empty() {
                    return Err(Error::config("no target pixels left to score"));
                }
                let pred = model.predict_mean(&context, &tgt.x_matrix())?;
                Ok(mse(&pred, tgt.ys()))
            })
            .collect()
    })?;
    Ok(records(label, Task::Fsic, spec, "mse", per_seed))
}

fn check_head<E: BaseEncoder + ?Sized>(head: &DecoderHead, encoder: &E, task: Task) -> Result<()> {
    if head.task != task {
        return Err(Error::config(format!("expected a {task} head, got {}", head.task)));
    }
    head.check_encoder(encoder)
}

/// Parameter identification: MSE over (amplitude, phase), averaged over both.
pub fn evaluate_fspi<S, E>(
    head: &DecoderHead,
    encoder: &E,
    test: &S,
    spec: &EvalSpec,
    label: &RunLabel,
) -> Result<Vec<MetricsRecord>>
where
    S: FunctionSource + ?Sized,
    E: BaseEncoder + ?Sized,
{
    check_head(head, encoder, Task::Fspi)?;
    let b = ContextBounds::sinusoid();
    spec.validate(b.n_context_min, b.n_context_max)?;
    let probe = head.linear()?;
    let per_seed = per_function_scores(test, spec, "fspi-eval", |items| {
        let mut contexts = Vec::with_capacity(items.len());
        let mut truth = Vec::with_capacity(items.len());
        for (_, inst, rng) in items {
            let p = inst.sine().ok_or_else(|| Error::config("parameter identification needs sinusoids"))?;
            contexts.push(inst.sample_context(spec.shots, spec.noise_sigma, &mut rng.clone())?);
            truth.push([p.amplitude, p.phase]);
        }
        let pred = probe.forward(&encoder.encode_base_sets(&contexts)?)?;
        Ok(truth.iter().enumerate().map(|(r, t)| mse(pred.row(r), t)).collect())
    })?;
    Ok(records(label, Task::Fspi, spec, "mse", per_seed))
}

/// Digit classification accuracy from `shots` context pixels.
pub fn evaluate_fscc<S, E>(
    head: &DecoderHead,
    encoder: &E,
    test: &S,
    spec: &EvalSpec,
    label: &RunLabel,
) -> Result<Vec<MetricsRecord>>
where
    S: FunctionSource + ?Sized,
    E: BaseEncoder + ?Sized,
{
    check_head(head, encoder, Task::Fscc)?;
    check_pixel_count(test, spec.shots)?;
    spec.validate(2, usize::MAX)?;
    image_labels(test)?;
    let probe = head.linear()?;
    let per_seed = per_function_scores(test, spec, "fscc-eval", |items| {
        let contexts = items
            .iter()
            .map(|(_, inst, rng)| inst.sample_context(spec.shots, spec.noise_sigma, &mut rng.clone()))
            .collect::<Result<Vec<_>>>()?;
        let classes = probe.classify(&encoder.encode_base_sets(&contexts)?)?;
        Ok(items
            .iter()
            .zip(classes)
            .map(|((_, inst, _), c)| if inst.label() == Some(c) { 1.0 } else { 0.0 })
            .collect())
    })?;
    Ok(records(label, Task::Fscc, spec, "accuracy", per_seed))
}
