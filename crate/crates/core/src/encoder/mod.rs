//! Permutation-invariant function encoder: a pointwise network on `(x, y)`
//! pairs, mean pooling over the set, then an optional projection head.

mod critic;

pub use critic::{Critic, CriticCache, CriticKind, CriticMode};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::data::ContextSet;
use crate::error::{Error, Result};
use crate::numerics::{Architecture, Matrix, Mlp, MlpCache, Parameters};

/// Whether a vector is a pooled base representation or a projected one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprKind {
    Base,
    Projected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub values: Vec<f64>,
    pub kind: ReprKind,
}

impl Representation {
    pub fn base(values: Vec<f64>) -> Self {
        Self {
            values,
            kind: ReprKind::Base,
        }
    }

    /// Fails unless this is a base representation.
    pub fn require_base(&self) -> Result<&[f64]> {
        match self.kind {
            ReprKind::Base => Ok(&self.values),
            ReprKind::Projected => Err(Error::config(
                "downstream heads consume base representations only; got a projected one",
            )),
        }
    }
}

/// Several variable-size sets stacked row-wise, with `offsets[i]..offsets[i+1]`
/// delimiting set `i`.
#[derive(Debug, Clone)]
pub struct SetBatch {
    pub inputs: Matrix,
    pub offsets: Vec<usize>,
}

impl SetBatch {
    pub fn from_sets<'a>(sets: impl IntoIterator<Item = &'a ContextSet>) -> Result<Self> {
        let sets: Vec<&ContextSet> = sets.into_iter().collect();
        let Some(first) = sets.first() else {
            return Err(Error::config("empty batch of context sets"));
        };
        let (xd, yd) = (first.x_dim(), first.y_dim());
        let width = xd + yd;
        let total: usize = sets.iter().map(|s| s.len()).sum();
        let mut data = Vec::with_capacity(total * width);
        let mut offsets = Vec::with_capacity(sets.len() + 1);
        offsets.push(0);
        for (i, s) in sets.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Data(format!("context set {i} in the batch is empty")));
            }
            if s.x_dim() != xd || s.y_dim() != yd {
                return Err(Error::config(format!("context set {i} has mismatched dimensions")));
            }
            for (x, y) in s.iter() {
                data.extend_from_slice(x);
                data.extend_from_slice(y);
            }
            offsets.push(offsets.last().unwrap() + s.len());
        }
        Ok(Self {
            inputs: Matrix::from_vec(total, width, data)?,
            offsets,
        })
    }

    pub fn num_sets(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn set_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }
}

/// Per-set mean of the rows of `points`.
pub fn mean_pool(points: &Matrix, offsets: &[usize]) -> Matrix {
    let d = points.cols();
    let mut out = Matrix::zeros(offsets.len() - 1, d);
    for s in 0..offsets.len() - 1 {
        let (lo, hi) = (offsets[s], offsets[s + 1]);
        let row = out.row_mut(s);
        for r in lo..hi {
            for (acc, v) in row.iter_mut().zip(points.row(r)) {
                *acc += v;
            }
        }
        let inv = 1.0 / (hi - lo) as f64;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// Gradient of [`mean_pool`] with respect to its input rows.
pub fn mean_pool_backward(d_pooled: &Matrix, offsets: &[usize]) -> Matrix {
    let total = *offsets.last().unwrap();
    let mut out = Matrix::zeros(total, d_pooled.cols());
    for s in 0..offsets.len() - 1 {
        let (lo, hi) = (offsets[s], offsets[s + 1]);
        let inv = 1.0 / (hi - lo) as f64;
        for r in lo..hi {
            for (o, g) in out.row_mut(r).iter_mut().zip(d_pooled.row(s)) {
                *o = g * inv;
            }
        }
    }
    out
}

/// Anything that maps context sets to pooled base representations.
///
/// Implemented by the contrastive encoder and by the CNP baseline's encoder,
/// so the same downstream heads can probe either.
pub trait BaseEncoder: Sync {
    fn x_dim(&self) -> usize;
    fn y_dim(&self) -> usize;
    fn d_repr(&self) -> usize;
    /// `[num_sets × d_repr]`.
    fn encode_base_batch(&self, batch: &SetBatch) -> Result<Matrix>;
    /// Flattened parameters, used to verify nothing downstream mutates the encoder.
    fn parameter_snapshot(&self) -> Vec<f64>;

    fn encode_base(&self, context: &ContextSet) -> Result<Representation> {
        if context.is_empty() {
            return Err(Error::Data("cannot encode an empty context".into()));
        }
        let pooled = self.encode_base_batch(&SetBatch::from_sets([context])?)?;
        Ok(Representation::base(pooled.into_vec()))
    }

    fn encode_base_sets(&self, sets: &[ContextSet]) -> Result<Matrix> {
        self.encode_base_batch(&SetBatch::from_sets(sets)?)
    }
}

/// Shape of a contrastive encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub x_dim: usize,
    pub y_dim: usize,
    pub d_repr: usize,
    pub critic: CriticKind,
    pub critic_batch_norm: bool,
}

impl EncoderSpec {
    /// `(x, y) → d → d → d` with hidden width equal to the representation size.
    pub fn pointwise_architecture(&self) -> Architecture {
        Architecture::new(vec![self.x_dim + self.y_dim, self.d_repr, self.d_repr, self.d_repr])
            .expect("non-zero widths")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub spec: EncoderSpec,
    /// Pointwise network.
    pub h: Mlp,
    /// Projection head (critic).
    pub critic: Critic,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    offsets: Vec<usize>,
    h: MlpCache,
    critic: CriticCache,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(spec: EncoderSpec, rng: &mut R) -> Self {
        let h = Mlp::new(&spec.pointwise_architecture(), rng);
        let critic = Critic::new(spec.critic, spec.d_repr, spec.critic_batch_norm, rng);
        Self { spec, h, critic }
    }

    pub fn zeros(spec: EncoderSpec) -> Self {
        Self {
            spec,
            h: Mlp::zeros(&spec.pointwise_architecture()),
            critic: Critic::zeros(spec.critic, spec.d_repr, spec.critic_batch_norm),
        }
    }

    /// Applies the projection head (evaluation mode) to a base representation.
    pub fn project(&self, base: &Representation) -> Result<Representation> {
        if base.kind != ReprKind::Base {
            return Err(Error::config("cannot project an already projected representation"));
        }
        let m = Matrix::from_vec(1, base.values.len(), base.values.clone())?;
        let (z, _) = self.critic.forward(&m, CriticMode::Eval)?;
        Ok(Representation {
            values: z.into_vec(),
            kind: ReprKind::Projected,
        })
    }

    pub fn encode(&self, context: &ContextSet) -> Result<Representation> {
        self.project(&self.encode_base(context)?)
    }

    /// Projected representations of a batch of sets.
    pub fn encode_batch(&self, batch: &SetBatch, mode: CriticMode) -> Result<Matrix> {
        let pooled = self.encode_base_batch(batch)?;
        Ok(self.critic.forward(&pooled, mode)?.0)
    }

    /// Training forward pass: projected representations plus everything backward needs.
    pub fn forward_train(&self, batch: &SetBatch) -> Result<(Matrix, EncoderCache)> {
        let (points, h_cache) = self.h.forward(&batch.inputs)?;
        let pooled = mean_pool(&points, &batch.offsets);
        let (projected, critic_cache) = self.critic.forward(&pooled, CriticMode::Train)?;
        Ok((
            projected,
            EncoderCache {
                offsets: batch.offsets.clone(),
                h: h_cache,
                critic: critic_cache,
            },
        ))
    }

    pub fn backward(&self, cache: &EncoderCache, d_projected: &Matrix) -> Result<EncoderParams> {
        let (critic_grad, d_pooled) = self.critic.backward(&cache.critic, d_projected)?;
        let d_points = mean_pool_backward(&d_pooled, &cache.offsets);
        let (h_grad, _) = self.h.backward(&cache.h, &d_points)?;
        Ok(EncoderParams {
            spec: self.spec,
            h: h_grad,
            critic: critic_grad,
        })
    }

    pub fn update_running(&mut self, cache: &EncoderCache) {
        self.critic.update_running(&cache.critic);
    }

    pub fn to_checkpoint(&self, config_hash: &str, seed: u64) -> Checkpoint {
        let architecture = serde_json::json!({
            "spec": self.spec,
            "h": self.h.architecture(),
            "rho": self.critic.architecture(),
        });
        let mut state = self.flatten();
        state.extend(self.critic.buffers());
        Checkpoint::new(ModelKind::FcrlEncoder, architecture, config_hash, seed, state)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::FcrlEncoder)?;
        let spec: EncoderSpec = serde_json::from_value(ckpt.header.architecture["spec"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad encoder spec: {e}")))?;
        let mut params = EncoderParams::zeros(spec);
        let h_arch: Architecture = serde_json::from_value(ckpt.header.architecture["h"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad pointwise architecture: {e}")))?;
        if h_arch != params.h.architecture() {
            return Err(Error::Checkpoint(format!(
                "pointwise architecture {h_arch} does not match spec ({})",
                params.h.architecture()
            )));
        }
        let n = params.num_params();
        let buffers = params.critic.buffer_len();
        if ckpt.state.len() != n + buffers {
            return Err(Error::Checkpoint(format!(
                "encoder state has {} values, expected {}",
                ckpt.state.len(),
                n + buffers
            )));
        }
        params.assign_flat(&ckpt.state[..n])?;
        params.critic.assign_buffers(&ckpt.state[n..])?;
        Ok(params)
    }
}

impl BaseEncoder for EncoderParams {
    fn x_dim(&self) -> usize {
        self.spec.x_dim
    }

    fn y_dim(&self) -> usize {
        self.spec.y_dim
    }

    fn d_repr(&self) -> usize {
        self.spec.d_repr
    }

    fn encode_base_batch(&self, batch: &SetBatch) -> Result<Matrix> {
        let points = self.h.predict(&batch.inputs)?;
        Ok(mean_pool(&points, &batch.offsets))
    }

    fn parameter_snapshot(&self) -> Vec<f64> {
        let mut v = self.flatten();
        v.extend(self.critic.buffers());
        v
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.h.tensors();
        t.extend(self.critic.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.h.tensors_mut();
        t.extend(self.critic.tensors_mut());
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut n: Vec<String> = self.h.tensor_names().into_iter().map(|s| format!("h.{s}")).collect();
        n.extend(self.critic.tensor_names());
        n
    }

    fn zeros_like(&self) -> Self {
        EncoderParams {
            spec: self.spec,
            h: self.h.zeros_like(),
            critic: self.critic.zeros_like(),
        }
    }
}
