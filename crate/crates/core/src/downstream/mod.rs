//! Heads trained on frozen base representations, and their evaluation.
//!
//! Regression (sinusoids) and image completion use a Gaussian MLP head on
//! `x ⊕ representation`. Parameter identification and digit classification use
//! linear probes trained for one epoch.

mod eval;
mod heads;
mod probe;

pub use eval::{
    evaluate_fscc, evaluate_fsic, evaluate_fspi, evaluate_fsr, summarize, uniform_grid, ContextRegressor,
    EvalSpec, FrozenHead, MetricSummary, MetricsRecord, PixelTargets, RunLabel, FSR_GRID_POINTS,
};
pub use heads::{train_fsic_decoder, train_fsr_decoder, train_gaussian_head};
pub(crate) use probe::probe_loss;
pub use probe::{train_fscc_probe, train_fspi_decoder, train_linear_probe, LinearProbe, ProbeLabels, ProbeTarget};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::data::ContextSet;
use crate::encoder::{BaseEncoder, Representation};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, GaussianHead, GaussianPrediction, Matrix, Mlp, Parameters, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Few-shot regression.
    Fsr,
    /// Few-shot parameter identification.
    Fspi,
    /// Few-shot image completion.
    Fsic,
    /// Few-shot content classification.
    Fscc,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Fsr, Task::Fspi, Task::Fsic, Task::Fscc];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Fsr => "fsr",
            Task::Fspi => "fspi",
            Task::Fsic => "fsic",
            Task::Fscc => "fscc",
        }
    }

    pub fn is_gaussian(self) -> bool {
        matches!(self, Task::Fsr | Task::Fsic)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown task {s:?} (expected fsr, fspi, fsic or fscc)")))
    }
}

/// Optimization settings of a downstream head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    /// Width of both hidden layers of Gaussian heads; ignored by linear probes.
    pub hidden: usize,
}

impl HeadConfig {
    pub fn fsr() -> Self {
        Self {
            batch_size: 256,
            epochs: 30,
            lr: 1e-3,
            schedule: Schedule::Cosine,
            adam: AdamConfig::default(),
            hidden: 50,
        }
    }

    pub fn fsic() -> Self {
        Self {
            batch_size: 16,
            epochs: 100,
            lr: 1e-3,
            schedule: Schedule::Cosine,
            adam: AdamConfig::default(),
            hidden: 128,
        }
    }

    /// One epoch of Adam at a constant rate.
    pub fn probe() -> Self {
        Self {
            batch_size: 16,
            epochs: 1,
            lr: 1e-3,
            schedule: Schedule::Constant,
            adam: AdamConfig::default(),
            hidden: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("head batch_size and epochs must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("head lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadModel {
    Gaussian(GaussianHead),
    Linear(LinearProbe),
}

/// A trained downstream head, tagged with the encoder it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderHead {
    pub task: Task,
    pub model: HeadModel,
    /// [`fingerprint`] of the frozen encoder.
    pub encoder_fingerprint: String,
}

/// SHA-256 over the bit patterns of an encoder's parameters and buffers.
pub fn fingerprint<E: BaseEncoder + ?Sized>(encoder: &E) -> String {
    let mut hasher = Sha256::new();
    for v in encoder.parameter_snapshot() {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Base representations of many contexts, `[contexts × d_repr]`, encoded in parallel chunks.
pub fn encode_contexts<E: BaseEncoder + ?Sized>(encoder: &E, contexts: &[ContextSet]) -> Result<Matrix> {
    let chunks: Vec<&[ContextSet]> = contexts.chunks(64).collect();
    let parts = crate::parallel::par_map(&chunks, |c| encoder.encode_base_sets(c));
    let mut data = Vec::with_capacity(contexts.len() * encoder.d_repr());
    for p in parts {
        data.extend_from_slice(p?.data());
    }
    Matrix::from_vec(contexts.len(), encoder.d_repr(), data)
}

impl DecoderHead {
    pub fn gaussian(&self) -> Result<&GaussianHead> {
        match &self.model {
            HeadModel::Gaussian(g) => Ok(g),
            HeadModel::Linear(_) => Err(Error::config(format!("{} head is not a Gaussian decoder", self.task))),
        }
    }

    pub fn linear(&self) -> Result<&LinearProbe> {
        match &self.model {
            HeadModel::Linear(p) => Ok(p),
            HeadModel::Gaussian(_) => Err(Error::config(format!("{} head is not a linear probe", self.task))),
        }
    }

    pub fn check_encoder<E: BaseEncoder + ?Sized>(&self, encoder: &E) -> Result<()> {
        if fingerprint(encoder) != self.encoder_fingerprint {
            return Err(Error::config(format!(
                "{} head was trained on a different encoder (fingerprint mismatch)",
                self.task
            )));
        }
        Ok(())
    }

    /// Gaussian prediction at `target_x` from one base representation.
    pub fn predict_gaussian(&self, repr: &Representation, target_x: &Matrix) -> Result<GaussianPrediction> {
        let base = repr.require_base()?;
        let s = Matrix::from_vec(1, base.len(), base.to_vec())?;
        let inputs = crate::cnp::decoder_inputs(target_x, &s, &vec![0; target_x.rows()])?;
        self.gaussian()?.predict(&inputs)
    }

    /// Linear-probe output (regression values or logits) for one base representation.
    pub fn predict_linear(&self, repr: &Representation) -> Result<Vec<f64>> {
        let base = repr.require_base()?;
        let m = Matrix::from_vec(1, base.len(), base.to_vec())?;
        Ok(self.linear()?.forward(&m)?.into_vec())
    }

    pub fn to_checkpoint(&self, config_hash: &str, seed: u64) -> Checkpoint {
        let (kind, arch, mut state) = match &self.model {
            HeadModel::Gaussian(g) => ("gaussian", g.net.architecture(), g.flatten()),
            HeadModel::Linear(p) => ("linear", p.net.architecture(), p.net.flatten()),
        };
        let mut extra = serde_json::Value::Null;
        if let HeadModel::Linear(p) = &self.model {
            state.extend_from_slice(&p.center);
            state.extend_from_slice(&p.scale);
            extra = serde_json::json!({ "target": p.target, "class_order": p.class_order });
        }
        let architecture = serde_json::json!({
            "task": self.task,
            "head": kind,
            "net": arch,
            "probe": extra,
            "encoder_fingerprint": self.encoder_fingerprint,
        });
        Checkpoint::new(ModelKind::DecoderHead, architecture, config_hash, seed, state)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::DecoderHead)?;
        let a = &ckpt.header.architecture;
        let bad = |what: &str| Error::Checkpoint(format!("decoder checkpoint: bad {what}"));
        let task: Task = serde_json::from_value(a["task"].clone()).map_err(|_| bad("task"))?;
        let arch: crate::numerics::Architecture =
            serde_json::from_value(a["net"].clone()).map_err(|_| bad("architecture"))?;
        let encoder_fingerprint = a["encoder_fingerprint"].as_str().ok_or_else(|| bad("fingerprint"))?.to_string();
        let mut net = Mlp::zeros(&arch);
        let n = net.num_params();
        if ckpt.state.len() < n {
            return Err(bad("state length"));
        }
        net.assign_flat(&ckpt.state[..n])?;
        let model = match a["head"].as_str() {
            Some("gaussian") => {
                if ckpt.state.len() != n {
                    return Err(bad("state length"));
                }
                HeadModel::Gaussian(GaussianHead::from_net(net)?)
            }
            Some("linear") => {
                let d = arch.input_dim();
                if ckpt.state.len() != n + 2 * d {
                    return Err(bad("state length"));
                }
                let target = serde_json::from_value(a["probe"]["target"].clone()).map_err(|_| bad("probe target"))?;
                let class_order =
                    serde_json::from_value(a["probe"]["class_order"].clone()).map_err(|_| bad("class order"))?;
                HeadModel::Linear(LinearProbe {
                    net,
                    center: ckpt.state[n..n + d].to_vec(),
                    scale: ckpt.state[n + d..].to_vec(),
                    target,
                    class_order,
                })
            }
            _ => return Err(bad("head kind")),
        };
        Ok(Self {
            task,
            model,
            encoder_fingerprint,
        })
    }
}
