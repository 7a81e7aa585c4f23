//! The contrastive objective over disjoint observation subsets and the encoder trainer.

mod loss;
mod split;

pub use loss::{cosine_sim, fcrl_loss, softmax_rows, LossOutput, SimilarityMatrix, NORM_EPS};
pub use split::split_observations;

use rand::Rng;

use crate::data::{stream_rng, tag, ContextSet, FunctionSource};
use crate::encoder::{EncoderParams, EncoderSpec, SetBatch};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Matrix};
use crate::training::{epoch_batches, CurvePoint, TrainConfig};

/// Representations with a norm below this are treated as collapsed.
pub const MIN_REPR_NORM: f64 = 1e-6;

/// Samples one context per function and splits each into `J` subsets.
///
/// Context sizes are drawn uniformly from `[max(n_context_min, J), n_context_max]`.
/// The returned batch holds subset `s` of the `f`-th function at position `f·J + s`.
pub fn assemble_batch<S: FunctionSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    indices: &[usize],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<SetBatch> {
    let j = config.j_subsets;
    let lo = config.bounds.n_context_min.max(j);
    let hi = config.bounds.n_context_max;
    if lo > hi {
        return Err(Error::config(format!(
            "J = {j} subsets need at least {j} points but n_context_max is {hi}"
        )));
    }
    let mut subsets: Vec<ContextSet> = Vec::with_capacity(indices.len() * j);
    for &i in indices {
        let n = rng.random_range(lo..=hi);
        let context = source.instance(i).sample_context(n, config.noise_sigma, rng)?;
        subsets.extend(split_observations(&context, j, rng)?);
    }
    SetBatch::from_sets(&subsets)
}

/// Loss and parameter gradients of one assembled batch.
pub fn contrastive_step(
    params: &EncoderParams,
    batch: &SetBatch,
    j: usize,
    temperature: f64,
) -> Result<(f64, EncoderParams, crate::encoder::EncoderCache)> {
    if !batch.num_sets().is_multiple_of(j) {
        return Err(Error::Internal("batch size is not a multiple of J".into()));
    }
    let k = batch.num_sets() / j;
    let (z, cache) = params.forward_train(batch)?;
    check_norms(&z)?;
    let LossOutput { loss, grad } = fcrl_loss(&z, k, j, temperature)?;
    let grads = params.backward(&cache, &grad)?;
    Ok((loss, grads, cache))
}

fn check_norms(z: &Matrix) -> Result<()> {
    for r in 0..z.rows() {
        let n = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > MIN_REPR_NORM) {
            return Err(Error::Numerical(format!(
                "projected representation {r} has norm {n:e} (collapsed or non-finite)"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub params: EncoderParams,
    pub curve: Vec<CurvePoint>,
}

pub fn encoder_spec<S: FunctionSource + ?Sized>(source: &S, config: &TrainConfig) -> EncoderSpec {
    EncoderSpec {
        x_dim: source.x_dim(),
        y_dim: source.y_dim(),
        d_repr: config.d_repr,
        critic: config.critic,
        critic_batch_norm: config.critic_batch_norm,
    }
}

/// Minibatch Adam on the contrastive loss with the configured schedule.
///
/// Deterministic in `(source, config, seed)`.
pub fn train_encoder<S: FunctionSource + ?Sized>(
    source: &S,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedEncoder> {
    config.validate()?;
    if source.len() < 2 {
        return Err(Error::Data("contrastive training needs at least two functions".into()));
    }
    let mut params = EncoderParams::new(encoder_spec(source, config), &mut stream_rng(seed, &[tag("init-encoder")]));
    let mut adam = AdamState::new(&params, config.adam);
    let total_steps = config.steps_per_epoch(source.len()) * config.epochs;
    let mut curve = Vec::with_capacity(total_steps);
    let mut step = 0;
    for epoch in 0..config.epochs {
        for (b, indices) in epoch_batches(source.len(), config.batch_size, seed, epoch).iter().enumerate() {
            let mut rng = stream_rng(seed, &[tag("contrastive-batch"), epoch as u64, b as u64]);
            let batch = assemble_batch(source, indices, config, &mut rng)?;
            let (loss, grads, cache) = contrastive_step(&params, &batch, config.j_subsets, config.temperature)
                .map_err(|e| with_batch(e, epoch, b))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch} batch {b}")));
            }
            let lr = config.schedule.lr(step, total_steps, config.lr);
            adam.step(&mut params, &grads, lr).map_err(|e| with_batch(e, epoch, b))?;
            params.update_running(&cache);
            curve.push(CurvePoint { step, epoch, lr, loss });
            step += 1;
        }
        log::info!(
            "encoder epoch {}/{}: loss {:.4}",
            epoch + 1,
            config.epochs,
            crate::training::tail_mean(&curve, config.steps_per_epoch(source.len()))
        );
    }
    Ok(TrainedEncoder { params, curve })
}

fn with_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("epoch {epoch} batch {batch}: {m}")),
        other => other,
    }
}
