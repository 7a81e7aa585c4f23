//! End-to-end pipelines: load data, train a model or head, evaluate, and keep
//! every artifact of a run together with the manifest that reproduces it.
//!
//! A run directory holds `manifest.json` plus whichever of `checkpoint.bin`,
//! `curve.csv`, `metrics.csv` and `summary.json` the job produced. Its name is
//! a hash of the job, the full config including the seed, and the checkpoints
//! of the upstream runs it read.

mod pipeline;
mod store;

pub use pipeline::{
    evaluate_model, head_config_hash, model_config_hash, probe_shots, train_head, train_model, Dataset, EvalTarget,
    LoadedModel, ModelFamily, TrainedModel,
};
pub use store::{
    artifact_hash, execute, read_metrics_csv, reproduce, run, write_metrics_csv, InputArtifact, Job, JobOutput,
    ReproReport, RunManifest, RunOptions, CHECKPOINT_FILE, CURVE_FILE, MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE,
};
