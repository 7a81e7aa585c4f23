//! One-epoch linear probes on frozen, standardized base representations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{encode_contexts, fingerprint, DecoderHead, HeadConfig, HeadModel, Task};
use crate::data::{stream_rng, tag, ContextBounds, ContextSet, FunctionSource};
use crate::encoder::BaseEncoder;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Architecture, Matrix, Mlp};
use crate::training::epoch_batches;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    /// Regression onto (amplitude, phase).
    SineParams,
    /// Ten-way digit classification.
    DigitClass,
}

/// A single affine layer applied to `(repr − center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub net: Mlp,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub target: ProbeTarget,
    /// Classes from most to least frequent in training; breaks argmax ties.
    pub class_order: Vec<usize>,
}

/// Training labels of a probe, one row per feature row.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeLabels {
    Regression(Matrix),
    Classes(Vec<usize>),
}

impl LinearProbe {
    /// Randomly initialized probe with identity standardization.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, outputs: usize, target: ProbeTarget, rng: &mut R) -> Self {
        let arch = Architecture::new(vec![input_dim, outputs]).expect("non-zero widths");
        Self {
            net: Mlp::new(&arch, rng),
            center: vec![0.0; input_dim],
            scale: vec![1.0; input_dim],
            target,
            class_order: (0..outputs).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn standardize(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.input_dim() {
            return Err(Error::config(format!(
                "probe expects {}-dimensional representations, got {}",
                self.input_dim(),
                features.cols()
            )));
        }
        let d = features.cols();
        Ok(Matrix::from_fn(features.rows(), d, |r, c| {
            (features.get(r, c) - self.center[c]) / self.scale[c]
        }))
    }

    /// Regression outputs or logits, `[rows × outputs]`.
    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        self.net.predict(&self.standardize(features)?)
    }

    /// Arg-max class per row.
    pub fn classify(&self, features: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(features)?;
        Ok((0..logits.rows()).map(|r| self.argmax(logits.row(r))).collect())
    }

    fn argmax(&self, logits: &[f64]) -> usize {
        let mut best = self.class_order[0];
        for &c in &self.class_order[1..] {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        best
    }
}

/// Mean squared error over all entries, or mean cross-entropy, with the
/// gradient with respect to the probe outputs.
pub(crate) fn probe_loss(outputs: &Matrix, labels: &ProbeLabels, rows: &[usize]) -> Result<(f64, Matrix)> {
    let n = outputs.rows();
    let k = outputs.cols();
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    match labels {
        ProbeLabels::Regression(y) => {
            let count = (n * k) as f64;
            for (r, &src) in rows.iter().enumerate() {
                for c in 0..k {
                    let d = outputs.get(r, c) - y.get(src, c);
                    loss += d * d / count;
                    grad.set(r, c, 2.0 * d / count);
                }
            }
        }
        ProbeLabels::Classes(classes) => {
            for (r, &src) in rows.iter().enumerate() {
                let label = classes[src];
                if label >= k {
                    return Err(Error::Data(format!("class {label} out of range for {k} logits")));
                }
                let row = outputs.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                loss += (m + z.ln() - row[label]) / n as f64;
                for c in 0..k {
                    let p = (row[c] - m).exp() / z;
                    let indicator = if c == label { 1.0 } else { 0.0 };
                    grad.set(r, c, (p - indicator) / n as f64);
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Fits a linear probe on precomputed features.
///
/// Features are standardized with their training mean and standard deviation.
/// Weights start at zero; for regression the bias starts at the target mean.
pub fn train_linear_probe(
    features: &Matrix,
    labels: &ProbeLabels,
    target: ProbeTarget,
    config: &HeadConfig,
    seed: u64,
) -> Result<LinearProbe> {
    config.validate()?;
    let n = features.rows();
    let d = features.cols();
    let (outputs, class_order) = match labels {
        ProbeLabels::Regression(y) => {
            if y.rows() != n {
                return Err(Error::Internal("probe labels and features disagree in length".into()));
            }
            (y.cols(), (0..y.cols()).collect())
        }
        ProbeLabels::Classes(c) => {
            if c.len() != n {
                return Err(Error::Internal("probe labels and features disagree in length".into()));
            }
            let k = 10;
            let mut counts = vec![0usize; k];
            for &label in c {
                if label >= k {
                    return Err(Error::Data(format!("class {label} out of range")));
                }
                counts[label] += 1;
            }
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by_key(|&c| std::cmp::Reverse(counts[c]));
            (k, order)
        }
    };
    if n == 0 {
        return Err(Error::Data("cannot train a probe on zero examples".into()));
    }
    let mut center = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for r in 0..n {
        for (c, v) in features.row(r).iter().enumerate() {
            center[c] += v / n as f64;
        }
    }
    for r in 0..n {
        for (c, v) in features.row(r).iter().enumerate() {
            scale[c] += (v - center[c]).powi(2) / n as f64;
        }
    }
    for s in &mut scale {
        *s = if s.sqrt() > 1e-12 { s.sqrt() } else { 1.0 };
    }
    let arch = Architecture::new(vec![d, outputs])?;
    let mut net = Mlp::zeros(&arch);
    if let ProbeLabels::Regression(y) = labels {
        for (c, b) in net.layers_mut()[0].bias.iter_mut().enumerate() {
            *b = (0..n).map(|r| y.get(r, c)).sum::<f64>() / n as f64;
        }
    }
    let mut probe = LinearProbe {
        net,
        center,
        scale,
        target,
        class_order,
    };
    let standardized = probe.standardize(features)?;
    let mut adam = AdamState::new(&probe.net, config.adam);
    let per_epoch = n.div_ceil(config.batch_size);
    let total = per_epoch * config.epochs;
    let mut step = 0;
    for epoch in 0..config.epochs {
        for rows in epoch_batches_any(n, config.batch_size, seed, epoch) {
            let x = standardized.select_rows(&rows);
            let (out, cache) = probe.net.forward(&x)?;
            let (loss, dout) = probe_loss(&out, labels, &rows)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite probe loss at step {step}")));
            }
            let (grads, _) = probe.net.backward(&cache, &dout)?;
            adam.step(&mut probe.net, &grads, config.schedule.lr(step, total, config.lr))?;
            step += 1;
        }
    }
    Ok(probe)
}

/// Like [`epoch_batches`] but keeps single-example trailing batches.
fn epoch_batches_any(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut batches = epoch_batches(n, batch_size, seed, epoch);
    let covered: usize = batches.iter().map(Vec::len).sum();
    if covered < n {
        let mut seen = vec![false; n];
        for &i in batches.iter().flatten() {
            seen[i] = true;
        }
        batches.push((0..n).filter(|&i| !seen[i]).collect());
    }
    batches
}

fn sine_labels<S: FunctionSource + ?Sized>(source: &S) -> Result<Matrix> {
    let mut y = Vec::with_capacity(2 * source.len());
    for i in 0..source.len() {
        let inst = source.instance(i);
        let p = inst
            .sine()
            .ok_or_else(|| Error::config("parameter identification needs a sinusoid dataset"))?;
        y.push(p.amplitude);
        y.push(p.phase);
    }
    Matrix::from_vec(source.len(), 2, y)
}

/// Frozen-encoder features for one context per function.
///
/// Context sizes come from `n_context` (fixed) or are drawn from `bounds`.
pub(crate) fn context_features<S: FunctionSource + ?Sized, E: BaseEncoder + ?Sized>(
    encoder: &E,
    source: &S,
    n_context: Option<usize>,
    bounds: &ContextBounds,
    noise_sigma: f64,
    stream: &str,
    seed: u64,
) -> Result<Matrix> {
    let contexts: Vec<ContextSet> = (0..source.len())
        .map(|i| {
            let mut rng = stream_rng(seed, &[tag(stream), i as u64]);
            let n = n_context.unwrap_or_else(|| rng.random_range(bounds.n_context_min..=bounds.n_context_max));
            source.instance(i).sample_context(n, noise_sigma, &mut rng)
        })
        .collect::<Result<_>>()?;
    encode_contexts(encoder, &contexts)
}

/// Linear regression onto sinusoid (amplitude, phase).
///
/// Each training function contributes one context whose size is drawn from `bounds`.
pub fn train_fspi_decoder<S: FunctionSource + ?Sized, E: BaseEncoder + ?Sized>(
    encoder: &E,
    source: &S,
    bounds: &ContextBounds,
    noise_sigma: f64,
    config: &HeadConfig,
    seed: u64,
) -> Result<DecoderHead> {
    let labels = ProbeLabels::Regression(sine_labels(source)?);
    let features = context_features(encoder, source, None, bounds, noise_sigma, "fspi-train", seed)?;
    let probe = train_linear_probe(&features, &labels, ProbeTarget::SineParams, config, seed)?;
    Ok(DecoderHead {
        task: Task::Fspi,
        model: HeadModel::Linear(probe),
        encoder_fingerprint: fingerprint(encoder),
    })
}

/// Ten-way linear softmax probe on contexts of exactly `context_count` pixels.
pub fn train_fscc_probe<S: FunctionSource + ?Sized, E: BaseEncoder + ?Sized>(
    encoder: &E,
    source: &S,
    context_count: usize,
    noise_sigma: f64,
    config: &HeadConfig,
    seed: u64,
) -> Result<DecoderHead> {
    let labels = image_labels(source)?;
    check_pixel_count(source, context_count)?;
    let bounds = ContextBounds::image();
    let features = context_features(encoder, source, Some(context_count), &bounds, noise_sigma, "fscc-train", seed)?;
    let probe = train_linear_probe(&features, &ProbeLabels::Classes(labels), ProbeTarget::DigitClass, config, seed)?;
    Ok(DecoderHead {
        task: Task::Fscc,
        model: HeadModel::Linear(probe),
        encoder_fingerprint: fingerprint(encoder),
    })
}

pub(crate) fn image_labels<S: FunctionSource + ?Sized>(source: &S) -> Result<Vec<usize>> {
    (0..source.len())
        .map(|i| {
            let inst = source.instance(i);
            match (inst.image(), inst.label()) {
                (Some(_), Some(l)) => Ok(l),
                _ => Err(Error::config("content classification needs an image dataset")),
            }
        })
        .collect()
}

pub(crate) fn check_pixel_count<S: FunctionSource + ?Sized>(source: &S, context_count: usize) -> Result<()> {
    let pixels = if source.is_empty() {
        784
    } else {
        source.instance(0).max_distinct_points().unwrap_or(784)
    };
    if context_count < 2 || context_count > pixels {
        return Err(Error::config(format!(
            "context_count {context_count} outside [2, {pixels}]"
        )));
    }
    Ok(())
}
