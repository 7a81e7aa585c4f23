use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pipeline::{
    evaluate_model, head_config_hash, model_config_hash, probe_shots, train_head, train_model, Dataset, EvalTarget,
    LoadedModel, ModelFamily,
};
use crate::checkpoint::{Checkpoint, ModelKind};
use crate::config::ExperimentConfig;
use crate::downstream::{summarize, DecoderHead, MetricsRecord, RunLabel, Task};
use crate::error::{Error, Result};
use crate::training::CurvePoint;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CURVE_FILE: &str = "curve.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// What a run does. Upstream runs are referenced by directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Job {
    TrainEncoder,
    TrainCnp,
    TrainDecoder {
        encoder_run: PathBuf,
        task: Task,
        /// Context count of a classification probe.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shots: Option<usize>,
    },
    Evaluate {
        /// An encoder, CNP or decoder-head run.
        model_run: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task: Option<Task>,
    },
}

impl Job {
    pub fn command(&self) -> &'static str {
        match self {
            Job::TrainEncoder => "train-encoder",
            Job::TrainCnp => "train-cnp",
            Job::TrainDecoder { .. } => "train-decoder",
            Job::Evaluate { .. } => "evaluate",
        }
    }

    /// The job without upstream paths, which are identified by content instead.
    fn identity(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("job serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("encoder_run");
            obj.remove("model_run");
        }
        v
    }
}

/// An upstream run a job read, pinned by the hash of its checkpoint file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputArtifact {
    pub run_dir: PathBuf,
    pub run_id: String,
    pub checkpoint_sha256: String,
}

/// Everything needed to regenerate a run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub job: Job,
    /// Representation model behind the run.
    pub model: ModelFamily,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub data_dir: Option<PathBuf>,
    pub inputs: Vec<InputArtifact>,
    /// Files in the run directory, manifest excluded.
    pub files: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(format!("no run manifest at {}", path.display())),
            _ => Error::io(&path, e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: bad manifest: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Run directories are created directly under this root.
    pub out_root: PathBuf,
    pub data_dir: Option<PathBuf>,
    /// Replace an existing run directory instead of failing.
    pub force: bool,
    /// Return an existing completed run with the same id instead of failing.
    pub reuse: bool,
}

/// In-memory artifacts of one job.
#[derive(Debug, Clone)]
pub struct JobOutput {
    pub model: ModelFamily,
    pub checkpoint: Option<Checkpoint>,
    pub curve: Vec<CurvePoint>,
    pub metrics: Vec<MetricsRecord>,
}

/// Hex SHA-256 of a file's bytes.
pub fn artifact_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(format!("{} does not exist", path.display())),
        _ => Error::io(path, e),
    })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn input_artifact(run_dir: &Path) -> Result<(InputArtifact, RunManifest)> {
    let manifest = RunManifest::load(run_dir)?;
    let artifact = InputArtifact {
        run_dir: run_dir.to_path_buf(),
        run_id: manifest.run_id.clone(),
        checkpoint_sha256: artifact_hash(&run_dir.join(CHECKPOINT_FILE))?,
    };
    Ok((artifact, manifest))
}

fn load_checkpoint(input: &InputArtifact) -> Result<Checkpoint> {
    let path = input.run_dir.join(CHECKPOINT_FILE);
    let ckpt = Checkpoint::load(&path)?;
    if hex::encode(Sha256::digest(ckpt.to_bytes())) != input.checkpoint_sha256 {
        return Err(Error::Checkpoint(format!("{} changed while it was being read", path.display())));
    }
    Ok(ckpt)
}

/// Upstream runs of a job, in the order they are read.
fn resolve_inputs(job: &Job) -> Result<Vec<InputArtifact>> {
    match job {
        Job::TrainEncoder | Job::TrainCnp => Ok(Vec::new()),
        Job::TrainDecoder { encoder_run, .. } => Ok(vec![input_artifact(encoder_run)?.0]),
        Job::Evaluate { model_run, .. } => {
            let (input, manifest) = input_artifact(model_run)?;
            match manifest.job {
                Job::TrainDecoder { .. } => {
                    let encoder = manifest
                        .inputs
                        .first()
                        .ok_or_else(|| Error::Checkpoint("decoder run does not record its encoder".into()))?;
                    Ok(vec![input, input_artifact(&encoder.run_dir)?.0])
                }
                Job::TrainEncoder | Job::TrainCnp => Ok(vec![input]),
                Job::Evaluate { .. } => Err(Error::config("an evaluation run has no model to evaluate")),
            }
        }
    }
}

fn run_id(job: &Job, config: &ExperimentConfig, inputs: &[InputArtifact]) -> String {
    let id = serde_json::json!({
        "command": job.command(),
        "job": job.identity(),
        "inputs": inputs.iter().map(|i| &i.checkpoint_sha256).collect::<Vec<_>>(),
        "config": config,
    });
    hex::encode(&Sha256::digest(serde_json::to_vec(&id).expect("json serializes"))[..8])
}

fn load_model(input: &InputArtifact, config: &ExperimentConfig) -> Result<LoadedModel> {
    let ckpt = load_checkpoint(input)?;
    let model = LoadedModel::from_checkpoint(&ckpt)?;
    if ckpt.header.config_hash != model_config_hash(config) {
        return Err(Error::config(format!(
            "{} was trained with different family or encoder settings than this config",
            input.run_dir.display()
        )));
    }
    Ok(model)
}

/// Fills in defaults that would otherwise depend on a later config, so the job is self-contained.
fn normalize(job: &Job, config: &ExperimentConfig) -> Result<Job> {
    Ok(match job {
        Job::TrainDecoder {
            encoder_run,
            task: Task::Fscc,
            shots,
        } => Job::TrainDecoder {
            encoder_run: encoder_run.clone(),
            task: Task::Fscc,
            shots: Some(probe_shots(config, *shots)?),
        },
        other => other.clone(),
    })
}

/// Runs `job` without touching the output tree.
pub fn execute(
    job: &Job,
    config: &ExperimentConfig,
    data_dir: Option<&Path>,
    run_id: &str,
    inputs: &[InputArtifact],
) -> Result<JobOutput> {
    let seed = config.require_seed()?;
    let data = Dataset::load(config, seed, data_dir)?;
    match job {
        Job::TrainEncoder | Job::TrainCnp => {
            let kind = if *job == Job::TrainEncoder { ModelFamily::Fcrl } else { ModelFamily::Cnp };
            let trained = train_model(kind, config, &data, seed)?;
            Ok(JobOutput {
                model: kind,
                checkpoint: Some(trained.model.to_checkpoint(&model_config_hash(config), seed)),
                curve: trained.curve,
                metrics: Vec::new(),
            })
        }
        Job::TrainDecoder { task, shots, .. } => {
            let model = load_model(&inputs[0], config)?;
            let (head, curve) = train_head(&model, *task, *shots, config, &data, seed)?;
            Ok(JobOutput {
                model: model.family(),
                checkpoint: Some(head.to_checkpoint(&head_config_hash(config, *task), seed)),
                curve,
                metrics: Vec::new(),
            })
        }
        Job::Evaluate { task, .. } => {
            let first = load_checkpoint(&inputs[0])?;
            let (model, head, trained_at) = if first.header.model_kind == ModelKind::DecoderHead {
                let head = DecoderHead::from_checkpoint(&first)?;
                let trained_at = match RunManifest::load(&inputs[0].run_dir)?.job {
                    Job::TrainDecoder { shots, .. } => shots,
                    _ => None,
                };
                (load_model(&inputs[1], config)?, Some(head), trained_at)
            } else {
                (load_model(&inputs[0], config)?, None, None)
            };
            let task = match (&head, task) {
                (Some(h), Some(t)) if h.task != *t => {
                    return Err(Error::config(format!("the decoder run holds a {} head, not {t}", h.task)));
                }
                (Some(h), _) => h.task,
                (None, Some(t)) => *t,
                (None, None) => return Err(Error::config("evaluating an encoder or CNP run needs a task")),
            };
            let target = match &head {
                Some(h) => EvalTarget::Head {
                    head: h,
                    probe_shots: trained_at,
                },
                None => EvalTarget::Model,
            };
            let label = RunLabel::new(run_id, model.family().as_str());
            let metrics = evaluate_model(&model, target, task, config, &data, seed, &label)?;
            Ok(JobOutput {
                model: model.family(),
                checkpoint: None,
                curve: Vec::new(),
                metrics,
            })
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Executes `job` and writes its run directory; returns the directory and manifest.
pub fn run(job: &Job, config: &ExperimentConfig, opts: &RunOptions) -> Result<(PathBuf, RunManifest)> {
    let seed = config.require_seed()?;
    let job = normalize(job, config)?;
    let inputs = resolve_inputs(&job)?;
    let id = run_id(&job, config, &inputs);
    let dir = opts.out_root.join(&id);
    if dir.exists() && fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?.next().is_some() {
        if opts.reuse && !opts.force {
            if let Ok(done) = RunManifest::load(&dir) {
                if done.run_id == id {
                    log::info!("reusing {}", dir.display());
                    return Ok((dir, done));
                }
            }
        }
        if !opts.force {
            return Err(Error::config(format!(
                "output directory {} already exists (pass --force to replace it)",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let started_unix = unix_now();
    let output = execute(&job, config, opts.data_dir.as_deref(), &id, &inputs)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();
    if let Some(ckpt) = &output.checkpoint {
        ckpt.save(&dir.join(CHECKPOINT_FILE))?;
        files.push(CHECKPOINT_FILE.to_string());
    }
    if !output.curve.is_empty() {
        write_file(&dir.join(CURVE_FILE), &curve_csv(&output.curve)?)?;
        files.push(CURVE_FILE.to_string());
    }
    if !output.metrics.is_empty() {
        write_metrics_csv(&dir.join(METRICS_FILE), &output.metrics)?;
        let summary = serde_json::to_vec_pretty(&summarize(&output.metrics)).expect("summary serializes");
        write_file(&dir.join(SUMMARY_FILE), &summary)?;
        files.push(METRICS_FILE.to_string());
        files.push(SUMMARY_FILE.to_string());
    }
    let manifest = RunManifest {
        run_id: id,
        version: format!("fcrl {}", env!("CARGO_PKG_VERSION")),
        job,
        model: output.model,
        seed,
        config: config.clone(),
        data_dir: opts.data_dir.clone(),
        inputs,
        files,
        started_unix,
        finished_unix: unix_now(),
    };
    let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), &text)?;
    Ok((dir, manifest))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Internal(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Internal(format!("csv: {e}")))
}

fn curve_csv(curve: &[CurvePoint]) -> Result<Vec<u8>> {
    csv_bytes(curve)
}

/// Long-format metrics table with a header row.
pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_file(path, &csv_bytes(records)?)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<MetricsRecord>, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Outcome of re-running a manifest and comparing against the stored files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReproReport {
    pub run_id: String,
    /// `None` when the run has no such artifact.
    pub checkpoint_identical: Option<bool>,
    pub curve_identical: Option<bool>,
    pub metrics_identical: Option<bool>,
    pub metrics_compared: usize,
}

impl ReproReport {
    pub fn identical(&self) -> bool {
        [self.checkpoint_identical, self.curve_identical, self.metrics_identical]
            .iter()
            .all(|c| c.unwrap_or(true))
    }
}

/// Re-executes the run in `run_dir` from its manifest and compares every artifact byte for byte.
pub fn reproduce(run_dir: &Path) -> Result<ReproReport> {
    let manifest = RunManifest::load(run_dir)?;
    let inputs = resolve_inputs(&manifest.job)?;
    for (now, then) in inputs.iter().zip(&manifest.inputs) {
        if now.checkpoint_sha256 != then.checkpoint_sha256 {
            return Err(Error::Checkpoint(format!(
                "input run {} no longer matches the checkpoint this run read",
                now.run_dir.display()
            )));
        }
    }
    let output = execute(&manifest.job, &manifest.config, manifest.data_dir.as_deref(), &manifest.run_id, &inputs)?;
    let stored = |name: &str| -> Result<Option<Vec<u8>>> {
        if !manifest.files.iter().any(|f| f == name) {
            return Ok(None);
        }
        let path = run_dir.join(name);
        fs::read(&path).map(Some).map_err(|e| Error::io(&path, e))
    };
    let compare = |name: &str, fresh: Option<Vec<u8>>| -> Result<Option<bool>> {
        Ok(match (stored(name)?, fresh) {
            (None, None) => None,
            (Some(a), Some(b)) => Some(a == b),
            _ => Some(false),
        })
    };
    let fresh_ckpt = output.checkpoint.as_ref().map(Checkpoint::to_bytes);
    let fresh_curve = (!output.curve.is_empty()).then(|| curve_csv(&output.curve)).transpose()?;
    let fresh_metrics = (!output.metrics.is_empty()).then(|| csv_bytes(&output.metrics)).transpose()?;
    Ok(ReproReport {
        run_id: manifest.run_id.clone(),
        checkpoint_identical: compare(CHECKPOINT_FILE, fresh_ckpt)?,
        curve_identical: compare(CURVE_FILE, fresh_curve)?,
        metrics_identical: compare(METRICS_FILE, fresh_metrics)?,
        metrics_compared: output.metrics.len(),
    })
}
