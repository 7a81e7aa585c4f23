use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, ModelKind};
use crate::cnp::{train_cnp, CnpParams};
use crate::config::{ExperimentConfig, Family};
use crate::contrastive::train_encoder;
use crate::data::{FunctionSource, ImageSet, MnistDataset, SinusoidDataset};
use crate::downstream::{
    evaluate_fscc, evaluate_fsic, evaluate_fspi, evaluate_fsr, train_fscc_probe, train_fsic_decoder,
    train_fspi_decoder, train_fsr_decoder, DecoderHead, FrozenHead, MetricsRecord, PixelTargets, RunLabel, Task,
};
use crate::encoder::{BaseEncoder, EncoderParams};
use crate::error::{Error, Result};
use crate::training::CurvePoint;

/// Train and test functions of one experiment.
#[derive(Debug, Clone)]
pub enum Dataset {
    Sinusoid(SinusoidDataset),
    Mnist { train: ImageSet, test: ImageSet },
}

impl Dataset {
    /// Sinusoids are generated from `seed`; MNIST is read from `data_dir`.
    pub fn load(config: &ExperimentConfig, seed: u64, data_dir: Option<&Path>) -> Result<Self> {
        let d = &config.data;
        match config.family {
            Family::Sinusoid => Ok(Dataset::Sinusoid(SinusoidDataset::generate(
                d.sinusoid,
                (d.n_train, d.n_val, d.n_test),
                seed,
            )?)),
            Family::Mnist => {
                let dir = data_dir.ok_or_else(|| {
                    Error::MissingArtifact("MNIST runs need the directory holding the IDX files".into())
                })?;
                let mnist = MnistDataset::load_dir(dir)?;
                Ok(Dataset::Mnist {
                    train: mnist.train.take(d.n_train),
                    test: mnist.test.take(d.n_test),
                })
            }
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Dataset::Sinusoid(_) => Family::Sinusoid,
            Dataset::Mnist { .. } => Family::Mnist,
        }
    }

    pub fn train(&self) -> &dyn FunctionSource {
        match self {
            Dataset::Sinusoid(s) => &s.train,
            Dataset::Mnist { train, .. } => train,
        }
    }

    pub fn test(&self) -> &dyn FunctionSource {
        match self {
            Dataset::Sinusoid(s) => &s.test,
            Dataset::Mnist { test, .. } => test,
        }
    }
}

/// Which model produces the representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Fcrl,
    Cnp,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Fcrl => "fcrl",
            ModelFamily::Cnp => "cnp",
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Fcrl(EncoderParams),
    Cnp(CnpParams),
}

impl LoadedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            LoadedModel::Fcrl(_) => ModelFamily::Fcrl,
            LoadedModel::Cnp(_) => ModelFamily::Cnp,
        }
    }

    pub fn encoder(&self) -> &dyn BaseEncoder {
        match self {
            LoadedModel::Fcrl(p) => p,
            LoadedModel::Cnp(p) => p,
        }
    }

    pub fn to_checkpoint(&self, config_hash: &str, seed: u64) -> Checkpoint {
        match self {
            LoadedModel::Fcrl(p) => p.to_checkpoint(config_hash, seed),
            LoadedModel::Cnp(p) => p.to_checkpoint(config_hash, seed),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match ckpt.header.model_kind {
            ModelKind::FcrlEncoder => Ok(LoadedModel::Fcrl(EncoderParams::from_checkpoint(ckpt)?)),
            ModelKind::Cnp => Ok(LoadedModel::Cnp(CnpParams::from_checkpoint(ckpt)?)),
            ModelKind::DecoderHead => Err(Error::Checkpoint(
                "expected an encoder or CNP checkpoint, found a decoder head".into(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: LoadedModel,
    pub curve: Vec<CurvePoint>,
}

/// Hash of the settings that fix a model's shape and training: the family and encoder section.
pub fn model_config_hash(config: &ExperimentConfig) -> String {
    hash_json(&serde_json::json!({ "family": config.family, "encoder": config.encoder }))
}

/// Hash of the settings behind a downstream head of `task`.
pub fn head_config_hash(config: &ExperimentConfig, task: Task) -> String {
    let head = if task.is_gaussian() { &config.decoder } else { &config.probe };
    hash_json(&serde_json::json!({
        "family": config.family,
        "encoder": config.encoder,
        "task": task,
        "head": head,
    }))
}

fn hash_json(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("json serializes")))
}

pub fn train_model(kind: ModelFamily, config: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<TrainedModel> {
    check_family(config, data)?;
    match kind {
        ModelFamily::Fcrl => {
            let t = train_encoder(data.train(), &config.encoder, seed)?;
            Ok(TrainedModel {
                model: LoadedModel::Fcrl(t.params),
                curve: t.curve,
            })
        }
        ModelFamily::Cnp => {
            let t = train_cnp(data.train(), &config.encoder, seed)?;
            Ok(TrainedModel {
                model: LoadedModel::Cnp(t.params),
                curve: t.curve,
            })
        }
    }
}

fn check_family(config: &ExperimentConfig, data: &Dataset) -> Result<()> {
    if config.family != data.family() {
        return Err(Error::config(format!(
            "config family {} does not match the {} dataset",
            config.family,
            data.family()
        )));
    }
    Ok(())
}

fn check_task(task: Task, family: Family) -> Result<()> {
    let ok = match task {
        Task::Fsr | Task::Fspi => family == Family::Sinusoid,
        Task::Fsic | Task::Fscc => family == Family::Mnist,
    };
    if !ok {
        return Err(Error::config(format!("task {task} is not defined for the {family} family")));
    }
    Ok(())
}

/// Context count a classification probe is trained on: the given one, or the largest evaluated.
pub fn probe_shots(config: &ExperimentConfig, shots: Option<usize>) -> Result<usize> {
    shots
        .or_else(|| config.eval.shots.iter().copied().max())
        .ok_or_else(|| Error::config("eval.shots is empty"))
}

/// Trains the head of `task` on the frozen model.
pub fn train_head(
    model: &LoadedModel,
    task: Task,
    shots: Option<usize>,
    config: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
) -> Result<(DecoderHead, Vec<CurvePoint>)> {
    check_family(config, data)?;
    check_task(task, config.family)?;
    let enc = model.encoder();
    let enc_cfg = &config.encoder;
    match task {
        Task::Fsr => train_fsr_decoder(enc, data.train(), &enc_cfg.bounds, enc_cfg.noise_sigma, &config.decoder, seed),
        Task::Fsic => train_fsic_decoder(enc, data.train(), &enc_cfg.bounds, enc_cfg.noise_sigma, &config.decoder, seed),
        Task::Fspi => Ok((
            train_fspi_decoder(enc, data.train(), &enc_cfg.bounds, enc_cfg.noise_sigma, &config.probe, seed)?,
            Vec::new(),
        )),
        Task::Fscc => Ok((
            train_fscc_probe(
                enc,
                data.train(),
                probe_shots(config, shots)?,
                enc_cfg.noise_sigma,
                &config.probe,
                seed,
            )?,
            Vec::new(),
        )),
    }
}

/// What an evaluation reads predictions from.
#[derive(Debug, Clone, Copy)]
pub enum EvalTarget<'a> {
    /// A trained head; classification probes are scored at the count they were trained on.
    Head { head: &'a DecoderHead, probe_shots: Option<usize> },
    /// The model alone: the CNP's own decoder for regression and completion,
    /// freshly trained probes for identification and classification.
    Model,
}

/// Metrics of `task` at every `eval.shots` value.
pub fn evaluate_model(
    model: &LoadedModel,
    target: EvalTarget<'_>,
    task: Task,
    config: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    label: &RunLabel,
) -> Result<Vec<MetricsRecord>> {
    check_family(config, data)?;
    check_task(task, config.family)?;
    let enc = model.encoder();
    let test = data.test();
    let mut out = Vec::new();
    match target {
        EvalTarget::Head { head, probe_shots: trained_at } => {
            if head.task != task {
                return Err(Error::config(format!("asked to evaluate {task} with a {} head", head.task)));
            }
            if task == Task::Fscc {
                let shots = probe_shots(config, trained_at)?;
                return evaluate_fscc(head, enc, test, &config.eval.spec(shots), label);
            }
            for &shots in &config.eval.shots {
                let spec = config.eval.spec(shots);
                out.extend(match task {
                    Task::Fsr => evaluate_fsr(&FrozenHead::new(head, enc)?, test, &spec, label)?,
                    Task::Fsic => evaluate_fsic(&FrozenHead::new(head, enc)?, test, &spec, PixelTargets::NonContext, label)?,
                    Task::Fspi => evaluate_fspi(head, enc, test, &spec, label)?,
                    Task::Fscc => unreachable!("handled above"),
                });
            }
        }
        EvalTarget::Model => match (task, model) {
            (Task::Fsr | Task::Fsic, LoadedModel::Fcrl(_)) => {
                return Err(Error::MissingArtifact(format!(
                    "{task} on a contrastive encoder needs a trained decoder head"
                )));
            }
            (Task::Fsr | Task::Fsic, LoadedModel::Cnp(cnp)) => {
                for &shots in &config.eval.shots {
                    let spec = config.eval.spec(shots);
                    out.extend(if task == Task::Fsr {
                        evaluate_fsr(cnp, test, &spec, label)?
                    } else {
                        evaluate_fsic(cnp, test, &spec, PixelTargets::NonContext, label)?
                    });
                }
            }
            (Task::Fspi, _) => {
                let (head, _) = train_head(model, Task::Fspi, None, config, data, seed)?;
                for &shots in &config.eval.shots {
                    out.extend(evaluate_fspi(&head, enc, test, &config.eval.spec(shots), label)?);
                }
            }
            (Task::Fscc, _) => {
                for &shots in &config.eval.shots {
                    let (head, _) = train_head(model, Task::Fscc, Some(shots), config, data, seed)?;
                    out.extend(evaluate_fscc(&head, enc, test, &config.eval.spec(shots), label)?);
                }
            }
        },
    }
    Ok(out)
}
