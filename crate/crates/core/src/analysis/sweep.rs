//! Grid sweeps over contrastive hyperparameters and training noise.
//!
//! Each cell trains one model and scores it downstream. Results go to a
//! long-format `sweep.csv` (one row per cell, task, shots, seed and metric) and
//! a `manifest.json` mapping each cell to its config hash and checkpoint.
//! Cells already listed in the manifest are not recomputed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Family};
use crate::downstream::{RunLabel, Task};
use crate::encoder::CriticKind;
use crate::error::{Error, Result};
use crate::experiment::{evaluate_model, train_head, train_model, Dataset, EvalTarget, LoadedModel, ModelFamily};
use crate::parallel::{par_map, threads};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_MANIFEST: &str = "manifest.json";

/// One grid point: a model trained with these settings under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub model: ModelFamily,
    pub j_subsets: usize,
    pub temperature: f64,
    pub critic: CriticKind,
    /// Observation noise in training and evaluation.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SweepCell {
    /// The base config with this cell's axes and the sweep's epoch budget applied.
    pub fn config(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.seed = Some(self.seed);
        c.encoder.j_subsets = self.j_subsets;
        c.encoder.temperature = self.temperature;
        c.encoder.critic = self.critic;
        c.encoder.noise_sigma = self.noise_sigma;
        c.eval.noise_sigma = self.noise_sigma;
        if base.sweep.epochs > 0 {
            c.encoder.epochs = base.sweep.epochs;
            c.decoder.epochs = base.sweep.epochs;
        }
        c
    }

    /// Content hash of the resolved cell config and model.
    pub fn key(&self, base: &ExperimentConfig) -> String {
        let v = serde_json::json!({ "model": self.model, "config": self.config(base) });
        hex::encode(&Sha256::digest(serde_json::to_vec(&v).expect("json serializes"))[..8])
    }

    pub fn label(&self) -> String {
        format!(
            "{} J={} tau={} critic={} sigma={} seed={}",
            self.model, self.j_subsets, self.temperature, self.critic, self.noise_sigma, self.seed
        )
    }
}

/// `J × τ × critic × seed` contrastive cells at the base noise level.
pub fn ablation_cells(base: &ExperimentConfig) -> Vec<SweepCell> {
    let s = &base.sweep;
    let mut cells = Vec::new();
    for &j_subsets in &s.j_subsets {
        for &temperature in &s.temperature {
            for &critic in &s.critic {
                for &seed in &s.seeds {
                    cells.push(SweepCell {
                        model: ModelFamily::Fcrl,
                        j_subsets,
                        temperature,
                        critic,
                        noise_sigma: base.encoder.noise_sigma,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

/// `σ × seed × {FCRL, CNP}` cells at the base contrastive settings.
pub fn noise_cells(base: &ExperimentConfig) -> Vec<SweepCell> {
    let e = &base.encoder;
    let mut cells = Vec::new();
    for &noise_sigma in &base.sweep.noise_sigma {
        for &seed in &base.sweep.seeds {
            for model in [ModelFamily::Fcrl, ModelFamily::Cnp] {
                cells.push(SweepCell {
                    model,
                    j_subsets: e.j_subsets,
                    temperature: e.temperature,
                    critic: e.critic,
                    noise_sigma,
                    seed,
                });
            }
        }
    }
    cells
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub cell: String,
    pub model: ModelFamily,
    pub j_subsets: usize,
    pub temperature: f64,
    pub critic: CriticKind,
    pub noise_sigma: f64,
    pub train_seed: u64,
    pub task: Task,
    pub shots: usize,
    pub eval_seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub cell: SweepCell,
    pub config_hash: String,
    /// Relative to the sweep directory.
    pub checkpoint: Option<PathBuf>,
    /// Why the cell was not trained, if it was skipped.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub cells: BTreeMap<String, CellEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Every row in `sweep.csv` after this call, old and new.
    pub records: Vec<SweepRecord>,
    pub computed: usize,
    pub reused: usize,
    pub skipped: usize,
}

/// Downstream tasks scored in each cell.
fn cell_tasks(family: Family, noise: bool) -> &'static [Task] {
    match (family, noise) {
        (Family::Sinusoid, false) => &[Task::Fsr],
        (Family::Sinusoid, true) => &[Task::Fsr, Task::Fspi],
        (Family::Mnist, _) => &[Task::Fscc],
    }
}

/// Trains one cell and scores it on `tasks`.
pub fn run_cell(
    cell: &SweepCell,
    base: &ExperimentConfig,
    tasks: &[Task],
    data_dir: Option<&Path>,
) -> Result<(LoadedModel, Vec<SweepRecord>)> {
    let config = cell.config(base);
    config.encoder.validate()?;
    let data = Dataset::load(&config, cell.seed, data_dir)?;
    let model = train_model(cell.model, &config, &data, cell.seed)?.model;
    let key = cell.key(base);
    let label = RunLabel::new(key.clone(), cell.model.as_str());
    let mut rows = Vec::new();
    for &task in tasks {
        let metrics = match (task, &model) {
            (Task::Fsr | Task::Fsic, LoadedModel::Fcrl(_)) => {
                let (head, _) = train_head(&model, task, None, &config, &data, cell.seed)?;
                let target = EvalTarget::Head {
                    head: &head,
                    probe_shots: None,
                };
                evaluate_model(&model, target, task, &config, &data, cell.seed, &label)?
            }
            _ => evaluate_model(&model, EvalTarget::Model, task, &config, &data, cell.seed, &label)?,
        };
        rows.extend(metrics.into_iter().map(|m| SweepRecord {
            cell: key.clone(),
            model: cell.model,
            j_subsets: cell.j_subsets,
            temperature: cell.temperature,
            critic: cell.critic,
            noise_sigma: cell.noise_sigma,
            train_seed: cell.seed,
            task: m.task,
            shots: m.shots,
            eval_seed: m.seed,
            metric: m.metric,
            value: m.value,
        }));
    }
    Ok((model, rows))
}

fn read_manifest(dir: &Path) -> Result<SweepManifest> {
    let path = dir.join(SWEEP_MANIFEST);
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(SweepManifest::default()),
        Err(e) => Err(Error::io(&path, e)),
    }
}

fn write_manifest(dir: &Path, manifest: &SweepManifest) -> Result<()> {
    let path = dir.join(SWEEP_MANIFEST);
    let tmp = dir.join(format!("{SWEEP_MANIFEST}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(manifest).expect("manifest serializes")).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SweepRecord>, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn append_rows(path: &Path, rows: &[SweepRecord]) -> Result<()> {
    let fresh = !path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every missing cell, `threads()` at a time, appending results as each wave finishes.
pub fn run_sweep(
    base: &ExperimentConfig,
    cells: &[SweepCell],
    tasks: &[Task],
    data_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<SweepOutcome> {
    fs::create_dir_all(out_dir.join("cells")).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = read_manifest(out_dir)?;
    let pending: Vec<(String, SweepCell)> = cells
        .iter()
        .map(|c| (c.key(base), *c))
        .filter(|(k, _)| !manifest.cells.contains_key(k))
        .collect();
    let reused = cells.len() - pending.len();
    let (mut computed, mut skipped) = (0, 0);
    let csv_path = out_dir.join(SWEEP_CSV);
    for wave in pending.chunks(threads().max(1)) {
        let results = par_map(wave, |(_, cell)| run_cell(cell, base, tasks, data_dir));
        let mut rows = Vec::new();
        for ((key, cell), result) in wave.iter().zip(results) {
            let config_hash = key.clone();
            let entry = match result {
                Ok((model, cell_rows)) => {
                    let rel = PathBuf::from("cells").join(format!("{key}.bin"));
                    let seed = cell.seed;
                    model.to_checkpoint(&config_hash, seed).save(&out_dir.join(&rel))?;
                    rows.extend(cell_rows);
                    computed += 1;
                    CellEntry {
                        cell: *cell,
                        config_hash,
                        checkpoint: Some(rel),
                        skipped: None,
                    }
                }
                Err(Error::Config(reason)) => {
                    log::warn!("skipping cell {}: {reason}", cell.label());
                    skipped += 1;
                    CellEntry {
                        cell: *cell,
                        config_hash,
                        checkpoint: None,
                        skipped: Some(reason),
                    }
                }
                Err(e) => return Err(e),
            };
            manifest.cells.insert(key.clone(), entry);
        }
        append_rows(&csv_path, &rows)?;
        write_manifest(out_dir, &manifest)?;
        log::info!("sweep: {} of {} pending cells done", computed + skipped, pending.len());
    }
    Ok(SweepOutcome {
        records: read_sweep_csv(&csv_path)?,
        computed,
        reused,
        skipped,
    })
}

/// Contrastive hyperparameter grid: FSR MSE for sinusoids, classification accuracy for MNIST.
pub fn ablation_sweep(base: &ExperimentConfig, data_dir: Option<&Path>, out_dir: &Path) -> Result<SweepOutcome> {
    run_sweep(base, &ablation_cells(base), cell_tasks(base.family, false), data_dir, out_dir)
}

/// FCRL and CNP trained and scored at each noise level.
pub fn noise_sweep(base: &ExperimentConfig, data_dir: Option<&Path>, out_dir: &Path) -> Result<SweepOutcome> {
    run_sweep(base, &noise_cells(base), cell_tasks(base.family, true), data_dir, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Checkpoint;
    use crate::config::Family;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(Family::Sinusoid);
        c.data.n_train = 64;
        c.data.n_test = 16;
        c.encoder.batch_size = 32;
        c.encoder.d_repr = 8;
        c.decoder.batch_size = 32;
        c.decoder.hidden = 8;
        c.eval.shots = vec![5];
        c.sweep.epochs = 1;
        c.sweep.seeds = vec![0];
        c
    }

    #[test]
    fn sinusoid_ablation_grid_has_eighteen_cells() {
        let c = ExperimentConfig::defaults(Family::Sinusoid);
        let cells = ablation_cells(&c);
        assert_eq!(cells.len(), 18);
        let keys: std::collections::HashSet<_> = cells.iter().map(|x| x.key(&c)).collect();
        assert_eq!(keys.len(), 18);
        assert!(cells.iter().all(|x| x.config(&c).encoder.validate().is_ok()));
    }

    #[test]
    fn sweep_resumes_and_skips_invalid_cells() {
        let tmp = tempfile::tempdir().unwrap();
        let mut base = tiny();
        base.sweep.j_subsets = vec![2, 40];
        base.sweep.temperature = vec![0.5];
        base.sweep.critic = vec![CriticKind::Dot, CriticKind::Nonlinear];
        let cells = ablation_cells(&base);
        let first = run_sweep(&base, &cells[..1], &[Task::Fsr], None, tmp.path()).unwrap();
        assert_eq!((first.computed, first.reused), (1, 0));
        let all = run_sweep(&base, &cells, &[Task::Fsr], None, tmp.path()).unwrap();
        assert_eq!((all.computed, all.reused, all.skipped), (1, 1, 2));
        assert_eq!(all.records.len(), 2);
        assert!(all.records.iter().all(|r| r.task == Task::Fsr && r.metric == "mse"));

        let manifest = read_manifest(tmp.path()).unwrap();
        assert_eq!(manifest.cells.len(), 4);
        let skipped: Vec<_> = manifest.cells.values().filter(|e| e.skipped.is_some()).collect();
        assert!(skipped.iter().all(|e| e.cell.j_subsets == 40 && e.checkpoint.is_none()));

        let dot = manifest.cells.values().find(|e| e.cell.critic == CriticKind::Dot && e.cell.j_subsets == 2).unwrap();
        let ckpt = Checkpoint::load(&tmp.path().join(dot.checkpoint.as_ref().unwrap())).unwrap();
        assert!(ckpt.header.architecture["rho"].is_null());

        let again = run_sweep(&base, &cells, &[Task::Fsr], None, tmp.path()).unwrap();
        assert_eq!((again.computed, again.reused), (0, 4));
        assert_eq!(again.records, all.records);
    }

    #[test]
    fn duplicated_cell_gives_identical_metrics() {
        let base = tiny();
        let cell = ablation_cells(&base)[0];
        let (_, a) = run_cell(&cell, &base, &[Task::Fsr], None).unwrap();
        let (_, b) = run_cell(&cell, &base, &[Task::Fsr], None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_cells_pair_models() {
        let base = ExperimentConfig::defaults(Family::Mnist);
        let cells = noise_cells(&base);
        assert_eq!(cells.len(), base.sweep.noise_sigma.len() * base.sweep.seeds.len() * 2);
        let c = cells.iter().find(|c| c.noise_sigma == 0.2 && c.model == ModelFamily::Cnp).unwrap().config(&base);
        assert_eq!((c.encoder.noise_sigma, c.eval.noise_sigma), (0.2, 0.2));
    }
}
