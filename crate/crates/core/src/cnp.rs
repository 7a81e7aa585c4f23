//! Conditional neural process baseline: the same pointwise encoder and mean
//! pooling, trained end-to-end with a Gaussian decoder on predictive likelihood.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::data::{stream_rng, tag, ContextBounds, ContextSet, FunctionSource};
use crate::encoder::{mean_pool, mean_pool_backward, BaseEncoder, SetBatch};
use crate::error::{Error, Result};
use crate::numerics::{
    AdamState, Architecture, GaussianHead, GaussianPrediction, Matrix, Mlp, Parameters,
};
use crate::training::{epoch_batches, tail_mean, CurvePoint, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnpSpec {
    pub x_dim: usize,
    pub y_dim: usize,
    pub d_repr: usize,
    /// Width of the decoder's two hidden layers.
    pub decoder_hidden: usize,
}

impl CnpSpec {
    pub fn encoder_architecture(&self) -> Architecture {
        Architecture::new(vec![self.x_dim + self.y_dim, self.d_repr, self.d_repr, self.d_repr])
            .expect("non-zero widths")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnpParams {
    pub spec: CnpSpec,
    pub encoder: Mlp,
    /// Maps `x ⊕ s` to `(μ, pre-variance)`.
    pub decoder: GaussianHead,
}

/// Contexts of several functions plus their targets, flattened.
#[derive(Debug, Clone)]
pub struct CnpBatch {
    pub contexts: SetBatch,
    pub target_x: Matrix,
    pub target_y: Matrix,
    /// Index of the context set each target row belongs to.
    pub owner: Vec<usize>,
}

impl CnpBatch {
    pub fn new(pairs: &[(ContextSet, ContextSet)]) -> Result<Self> {
        let contexts = SetBatch::from_sets(pairs.iter().map(|p| &p.0))?;
        let (xd, yd) = (pairs[0].0.x_dim(), pairs[0].0.y_dim());
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut owner = Vec::new();
        for (i, (_, t)) in pairs.iter().enumerate() {
            xs.extend_from_slice(t.xs());
            ys.extend_from_slice(t.ys());
            owner.extend(std::iter::repeat_n(i, t.len()));
        }
        if owner.is_empty() {
            return Err(Error::Data("CNP batch has no target points".into()));
        }
        Ok(Self {
            contexts,
            target_x: Matrix::from_vec(owner.len(), xd, xs)?,
            target_y: Matrix::from_vec(owner.len(), yd, ys)?,
            owner,
        })
    }
}

pub(crate) fn decoder_inputs(target_x: &Matrix, pooled: &Matrix, owner: &[usize]) -> Result<Matrix> {
    target_x.hstack(&pooled.select_rows(owner))
}

impl CnpParams {
    pub fn new<R: Rng + ?Sized>(spec: CnpSpec, rng: &mut R) -> Self {
        let encoder = Mlp::new(&spec.encoder_architecture(), rng);
        let h = spec.decoder_hidden;
        let decoder = GaussianHead::new(spec.x_dim + spec.d_repr, &[h, h], spec.y_dim, rng);
        Self { spec, encoder, decoder }
    }

    pub fn zeros(spec: CnpSpec) -> Self {
        let h = spec.decoder_hidden;
        Self {
            spec,
            encoder: Mlp::zeros(&spec.encoder_architecture()),
            decoder: GaussianHead::zeros(spec.x_dim + spec.d_repr, &[h, h], spec.y_dim),
        }
    }

    /// Predictive mean and variance at `target_x` given one context.
    pub fn predict(&self, context: &ContextSet, target_x: &Matrix) -> Result<GaussianPrediction> {
        if context.is_empty() {
            return Err(Error::Data("cannot condition on an empty context".into()));
        }
        if target_x.cols() != self.spec.x_dim {
            return Err(Error::config(format!(
                "targets have {} input dimensions, model expects {}",
                target_x.cols(),
                self.spec.x_dim
            )));
        }
        let pooled = self.encode_base_batch(&SetBatch::from_sets([context])?)?;
        let owner = vec![0; target_x.rows()];
        self.decoder.predict(&decoder_inputs(target_x, &pooled, &owner)?)
    }

    /// Mean NLL over every target in the batch, with gradients.
    pub fn loss_and_grads(&self, batch: &CnpBatch) -> Result<(f64, CnpParams)> {
        let (points, enc_cache) = self.encoder.forward(&batch.contexts.inputs)?;
        let pooled = mean_pool(&points, &batch.contexts.offsets);
        let inputs = decoder_inputs(&batch.target_x, &pooled, &batch.owner)?;
        let (nll, dec_grad, d_inputs) = self.decoder.loss_and_grads(&inputs, &batch.target_y)?;
        let (_, d_s_rows) = d_inputs.split_cols(self.spec.x_dim);
        let mut d_pooled = Matrix::zeros(pooled.rows(), pooled.cols());
        for (r, &o) in batch.owner.iter().enumerate() {
            for (acc, g) in d_pooled.row_mut(o).iter_mut().zip(d_s_rows.row(r)) {
                *acc += g;
            }
        }
        let d_points = mean_pool_backward(&d_pooled, &batch.contexts.offsets);
        let (enc_grad, _) = self.encoder.backward(&enc_cache, &d_points)?;
        Ok((
            nll,
            CnpParams {
                spec: self.spec,
                encoder: enc_grad,
                decoder: dec_grad,
            },
        ))
    }

    pub fn to_checkpoint(&self, config_hash: &str, seed: u64) -> Checkpoint {
        let architecture = serde_json::json!({
            "spec": self.spec,
            "h": self.encoder.architecture(),
            "decoder": self.decoder.net.architecture(),
        });
        Checkpoint::new(ModelKind::Cnp, architecture, config_hash, seed, self.flatten())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Cnp)?;
        let spec: CnpSpec = serde_json::from_value(ckpt.header.architecture["spec"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad CNP spec: {e}")))?;
        let mut params = CnpParams::zeros(spec);
        if ckpt.state.len() != params.num_params() {
            return Err(Error::Checkpoint(format!(
                "CNP state has {} values, expected {}",
                ckpt.state.len(),
                params.num_params()
            )));
        }
        params.assign_flat(&ckpt.state)?;
        Ok(params)
    }
}

impl BaseEncoder for CnpParams {
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
        Ok(mean_pool(&self.encoder.predict(&batch.inputs)?, &batch.offsets))
    }

    fn parameter_snapshot(&self) -> Vec<f64> {
        self.flatten()
    }
}

impl Parameters for CnpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut n: Vec<String> = self.encoder.tensor_names().into_iter().map(|s| format!("h.{s}")).collect();
        n.extend(self.decoder.tensor_names().into_iter().map(|s| format!("decoder.{s}")));
        n
    }

    fn zeros_like(&self) -> Self {
        CnpParams {
            spec: self.spec,
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }
}

/// Draws `(N, M)` per function from the configured bounds. The targets are the
/// context plus `M` further points.
pub fn assemble_cnp_batch<S: FunctionSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    indices: &[usize],
    bounds: &ContextBounds,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<CnpBatch> {
    let mut pairs = Vec::with_capacity(indices.len());
    for &i in indices {
        let (n, m) = bounds.sample_counts(rng);
        let (ctx, extra) = source.instance(i).sample_context_target(n, m, noise_sigma, rng)?;
        let mut targets = ctx.clone();
        for (x, y) in extra.iter() {
            targets.push(x, y);
        }
        pairs.push((ctx, targets));
    }
    CnpBatch::new(&pairs)
}

pub fn cnp_spec<S: FunctionSource + ?Sized>(source: &S, config: &TrainConfig) -> CnpSpec {
    CnpSpec {
        x_dim: source.x_dim(),
        y_dim: source.y_dim(),
        d_repr: config.d_repr,
        decoder_hidden: config.d_repr,
    }
}

#[derive(Debug, Clone)]
pub struct TrainedCnp {
    pub params: CnpParams,
    pub curve: Vec<CurvePoint>,
}

/// Joint encoder/decoder training with the same batching, optimizer and
/// schedule as the contrastive trainer.
pub fn train_cnp<S: FunctionSource + ?Sized>(source: &S, config: &TrainConfig, seed: u64) -> Result<TrainedCnp> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::Data("CNP training needs at least one function".into()));
    }
    let mut params = CnpParams::new(cnp_spec(source, config), &mut stream_rng(seed, &[tag("init-cnp")]));
    let mut adam = AdamState::new(&params, config.adam);
    let per_epoch = config.steps_per_epoch(source.len());
    let total_steps = per_epoch * config.epochs;
    let mut curve = Vec::with_capacity(total_steps);
    let mut step = 0;
    for epoch in 0..config.epochs {
        for (b, indices) in epoch_batches(source.len(), config.batch_size, seed, epoch).iter().enumerate() {
            let mut rng = stream_rng(seed, &[tag("cnp-batch"), epoch as u64, b as u64]);
            let batch = assemble_cnp_batch(source, indices, &config.bounds, config.noise_sigma, &mut rng)?;
            let (loss, grads) = params.loss_and_grads(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch} batch {b}")));
            }
            let lr = config.schedule.lr(step, total_steps, config.lr);
            adam.step(&mut params, &grads, lr)
                .map_err(|e| Error::Numerical(format!("epoch {epoch} batch {b}: {e}")))?;
            curve.push(CurvePoint { step, epoch, lr, loss });
            step += 1;
        }
        log::info!("cnp epoch {}/{}: nll {:.4}", epoch + 1, config.epochs, tail_mean(&curve, per_epoch));
    }
    Ok(TrainedCnp { params, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_sinusoid, FunctionInstance, SinusoidFamily};
    use crate::numerics::{grad_check, softplus, VARIANCE_FLOOR};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> CnpSpec {
        CnpSpec {
            x_dim: 1,
            y_dim: 1,
            d_repr: 8,
            decoder_hidden: 8,
        }
    }

    fn functions(n: usize, seed: u64) -> Vec<FunctionInstance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| sample_sinusoid(&SinusoidFamily::default(), i, &mut rng)).collect()
    }

    #[test]
    fn predictions_ignore_context_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = CnpParams::new(spec(), &mut rng);
        let ctx = functions(1, 1)[0].sample_context(12, 0.0, &mut rng).unwrap();
        let tx = Matrix::from_fn(7, 1, |r, _| r as f64 - 3.0);
        let base = params.predict(&ctx, &tx).unwrap();
        let mut order: Vec<usize> = (0..12).collect();
        for _ in 0..20 {
            order.shuffle(&mut rng);
            let p = params.predict(&ctx.subset(&order), &tx).unwrap();
            assert!(p.mean.max_abs_diff(&base.mean) < 1e-9);
            assert!(p.var.max_abs_diff(&base.var) < 1e-9);
        }
    }

    #[test]
    fn zero_decoder_outputs_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = CnpParams::new(spec(), &mut rng);
        let bias = [0.25, -1.5];
        params.decoder = GaussianHead::zeros(1 + 8, &[8, 8], 1);
        params.decoder.net.layers_mut().last_mut().unwrap().bias.copy_from_slice(&bias);
        let ctx = functions(1, 2)[0].sample_context(5, 0.0, &mut rng).unwrap();
        let p = params.predict(&ctx, &Matrix::from_fn(4, 1, |r, _| r as f64)).unwrap();
        assert!(p.mean.data().iter().all(|&m| m == bias[0]));
        let v = softplus(bias[1]) + VARIANCE_FLOOR;
        assert!(p.var.data().iter().all(|&x| x == v));
    }

    #[test]
    fn batched_targets_match_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = CnpParams::new(spec(), &mut rng);
        let ctx = functions(1, 3)[0].sample_context(6, 0.0, &mut rng).unwrap();
        let tx = Matrix::from_fn(9, 1, |r, _| r as f64 * 0.7 - 3.0);
        let all = params.predict(&ctx, &tx).unwrap();
        for r in 0..9 {
            let one = params.predict(&ctx, &Matrix::from_vec(1, 1, vec![tx.get(r, 0)]).unwrap()).unwrap();
            assert!((one.mean.get(0, 0) - all.mean.get(r, 0)).abs() < 1e-12);
            assert!((one.var.get(0, 0) - all.var.get(r, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn end_to_end_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = CnpParams::new(spec(), &mut rng);
        let fns = functions(3, 4);
        let pairs: Vec<_> = fns.iter().map(|f| f.sample_context_target(4, 3, 0.1, &mut rng).unwrap()).collect();
        let batch = CnpBatch::new(&pairs).unwrap();
        let (_, grads) = params.loss_and_grads(&batch).unwrap();
        let mut probe = params.clone();
        let r = grad_check(
            |p| {
                probe.assign_flat(p).unwrap();
                probe.loss_and_grads(&batch).unwrap().0
            },
            &params.flatten(),
            &grads.flatten(),
            1e-6,
        );
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn one_batch_overfit_decreases_nll() {
        let fns = functions(16, 5);
        let cfg = TrainConfig {
            d_repr: 32,
            ..TrainConfig::sinusoid()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = assemble_cnp_batch(&fns, &(0..16).collect::<Vec<_>>(), &cfg.bounds, 0.0, &mut rng).unwrap();
        let mut params = CnpParams::new(cnp_spec(&fns, &cfg), &mut rng);
        let mut adam = AdamState::new(&params, cfg.adam);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let (l, g) = params.loss_and_grads(&batch).unwrap();
            adam.step(&mut params, &g, 1e-4).unwrap();
            losses.push(l);
        }
        let increases = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert_eq!(increases, 0, "{increases} increases");
        assert!(losses[199] < losses[0] - 1.0, "{} -> {}", losses[0], losses[199]);
    }

    #[test]
    fn checkpoint_round_trip_and_kind_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = CnpParams::new(spec(), &mut rng);
        let ckpt = Checkpoint::from_bytes(&params.to_checkpoint("x", 1).to_bytes()).unwrap();
        assert_eq!(CnpParams::from_checkpoint(&ckpt).unwrap(), params);
        assert!(crate::encoder::EncoderParams::from_checkpoint(&ckpt).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let fns = functions(64, 8);
        let cfg = TrainConfig {
            batch_size: 16,
            epochs: 2,
            d_repr: 8,
            ..TrainConfig::sinusoid()
        };
        let a = train_cnp(&fns, &cfg, 3).unwrap();
        let b = train_cnp(&fns, &cfg, 3).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.curve.len(), 8);
    }
}
