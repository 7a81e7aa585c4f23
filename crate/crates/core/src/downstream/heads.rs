//! Gaussian decoders on `x ⊕ frozen base representation`.

use super::{fingerprint, DecoderHead, HeadConfig, HeadModel, Task};
use crate::cnp::{assemble_cnp_batch, decoder_inputs};
use crate::data::{stream_rng, tag, ContextBounds, FunctionSource};
use crate::encoder::BaseEncoder;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, GaussianHead};
use crate::training::{epoch_batches, tail_mean, CurvePoint};

/// Trains a two-hidden-layer Gaussian head by maximum likelihood on target points.
///
/// Contexts and targets are sampled exactly as for the CNP baseline. The encoder
/// is only read, so no gradient reaches it.
pub fn train_gaussian_head<S: FunctionSource + ?Sized, E: BaseEncoder + ?Sized>(
    encoder: &E,
    source: &S,
    task: Task,
    bounds: &ContextBounds,
    noise_sigma: f64,
    config: &HeadConfig,
    seed: u64,
) -> Result<(DecoderHead, Vec<CurvePoint>)> {
    config.validate()?;
    if !task.is_gaussian() {
        return Err(Error::config(format!("{task} is not a Gaussian decoding task")));
    }
    if source.is_empty() {
        return Err(Error::Data("decoder training needs at least one function".into()));
    }
    if source.x_dim() != encoder.x_dim() || source.y_dim() != encoder.y_dim() {
        return Err(Error::config("dataset dimensions do not match the encoder"));
    }
    let mut head = GaussianHead::new(
        encoder.x_dim() + encoder.d_repr(),
        &[config.hidden, config.hidden],
        encoder.y_dim(),
        &mut stream_rng(seed, &[tag("init-head"), tag(task.as_str())]),
    );
    let mut adam = AdamState::new(&head, config.adam);
    let per_epoch = source.len().div_ceil(config.batch_size);
    let total = per_epoch * config.epochs;
    let mut curve = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..config.epochs {
        for (b, indices) in epoch_batches(source.len(), config.batch_size, seed, epoch).iter().enumerate() {
            let mut rng = stream_rng(seed, &[tag("head-batch"), tag(task.as_str()), epoch as u64, b as u64]);
            let batch = assemble_cnp_batch(source, indices, bounds, noise_sigma, &mut rng)?;
            let pooled = encoder.encode_base_batch(&batch.contexts)?;
            let inputs = decoder_inputs(&batch.target_x, &pooled, &batch.owner)?;
            let (loss, grads, _) = head.loss_and_grads(&inputs, &batch.target_y)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite {task} head loss at epoch {epoch} batch {b}")));
            }
            let lr = config.schedule.lr(step, total, config.lr);
            adam.step(&mut head, &grads, lr)?;
            curve.push(CurvePoint { step, epoch, lr, loss });
            step += 1;
        }
        log::info!("{task} head epoch {}/{}: nll {:.4}", epoch + 1, config.epochs, tail_mean(&curve, per_epoch));
    }
    let decoder = DecoderHead {
        task,
        model: HeadModel::Gaussian(head),
        encoder_fingerprint: fingerprint(encoder),
    };
    Ok((decoder, curve))
}

pub fn train_fsr_decoder<S: FunctionSource + ?Sized, E: BaseEncoder + ?Sized>(
    encoder: &E,
    source: &S,
    bounds: &ContextBounds,
    noise_sigma: f64,
    config: &HeadConfig,
    seed: u64,
) -> Result<(DecoderHead, Vec<CurvePoint>)> {
    train_gaussian_head(encoder, source, Task::Fsr, bounds, noise_sigma, config, seed)
}

pub fn train_fsic_decoder<S: FunctionSource + ?Sized, E: BaseEncoder + ?Sized>(
    encoder: &E,
    source: &S,
    bounds: &ContextBounds,
    noise_sigma: f64,
    config: &HeadConfig,
    seed: u64,
) -> Result<(DecoderHead, Vec<CurvePoint>)> {
    if source.x_dim() != 2 {
        return Err(Error::config("image completion needs an image dataset"));
    }
    train_gaussian_head(encoder, source, Task::Fsic, bounds, noise_sigma, config, seed)
}
