//! Experiment configuration files.
//!
//! The primary format is TOML: `key = value` lines grouped under `[section]`
//! headers. JSON with the same structure is accepted too. Every key is
//! optional except `family`; missing keys take the family defaults. Unknown
//! keys, type errors and out-of-range values are reported with the dotted key
//! path and, when it can be found, the line number.
//!
//! ```toml
//! family = "sinusoid"
//! seed = 0
//!
//! [encoder]
//! temperature = 0.07
//! epochs = 30
//!
//! [encoder.bounds]
//! n_context_max = 20
//!
//! [eval]
//! shots = [5, 20]
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SinusoidFamily;
use crate::downstream::{EvalSpec, HeadConfig};
use crate::encoder::CriticKind;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Sinusoid,
    Mnist,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Sinusoid => "sinusoid",
            Family::Mnist => "mnist",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" => Ok(Family::Sinusoid),
            "mnist" => Ok(Family::Mnist),
            other => Err(Error::config(format!("unknown family {other:?} (expected sinusoid or mnist)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Sinusoid: functions generated per split. MNIST: leading images used (0 = all).
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Sinusoid parameter ranges; ignored for MNIST.
    pub sinusoid: SinusoidFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Context sizes evaluated (and, for content classification, probed).
    pub shots: Vec<usize>,
    /// Leading test functions evaluated; 0 means all.
    pub n_eval_functions: usize,
    pub noise_sigma: f64,
    /// Context resampling seeds.
    pub seeds: Vec<u64>,
}

impl EvalConfig {
    pub fn spec(&self, shots: usize) -> EvalSpec {
        EvalSpec::new(shots, self.n_eval_functions, self.noise_sigma, self.seeds.clone())
    }
}

/// Axes of the ablation and noise sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub j_subsets: Vec<usize>,
    pub temperature: Vec<f64>,
    pub critic: Vec<CriticKind>,
    pub noise_sigma: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Encoder and decoder epochs per cell; 0 keeps the configured values.
    pub epochs: usize,
}

/// A fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub data: DataConfig,
    /// Contrastive encoder and CNP baseline training.
    pub encoder: TrainConfig,
    /// Gaussian head: regression for sinusoids, image completion for MNIST.
    pub decoder: HeadConfig,
    /// Linear probes: parameter identification or content classification.
    pub probe: HeadConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

/// Largest seed a config can carry; TOML integers are signed 64-bit.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// Serialization format of a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn detect(path: &Path, text: &str) -> Self {
        let json_ext = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if json_ext || text.trim_start().starts_with('{') {
            ConfigFormat::Json
        } else {
            ConfigFormat::Toml
        }
    }
}

impl ExperimentConfig {
    pub fn defaults(family: Family) -> Self {
        match family {
            Family::Sinusoid => Self {
                family,
                seed: None,
                data: DataConfig {
                    n_train: 20_000,
                    n_val: 1000,
                    n_test: 1000,
                    sinusoid: SinusoidFamily::default(),
                },
                encoder: TrainConfig::sinusoid(),
                decoder: HeadConfig::fsr(),
                probe: HeadConfig::probe(),
                eval: EvalConfig {
                    shots: vec![5, 20],
                    n_eval_functions: 0,
                    noise_sigma: 0.0,
                    seeds: vec![0],
                },
                sweep: SweepConfig {
                    j_subsets: vec![2, 4, 10],
                    temperature: vec![0.07, 0.5, 1.0],
                    critic: vec![CriticKind::Dot, CriticKind::Nonlinear],
                    noise_sigma: vec![0.0, 0.05, 0.1, 0.2],
                    seeds: vec![0],
                    epochs: 10,
                },
            },
            Family::Mnist => Self {
                family,
                seed: None,
                data: DataConfig {
                    n_train: 0,
                    n_val: 0,
                    n_test: 0,
                    sinusoid: SinusoidFamily::default(),
                },
                encoder: TrainConfig::mnist(),
                decoder: HeadConfig::fsic(),
                probe: HeadConfig::probe(),
                eval: EvalConfig {
                    shots: vec![20, 50, 100, 200],
                    n_eval_functions: 0,
                    noise_sigma: 0.0,
                    seeds: vec![0],
                },
                sweep: SweepConfig {
                    j_subsets: vec![10, 40],
                    temperature: vec![0.007],
                    critic: vec![CriticKind::Nonlinear],
                    noise_sigma: vec![0.0, 0.05, 0.1, 0.2],
                    seeds: vec![0],
                    epochs: 10,
                },
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(format!("config file {}", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text, ConfigFormat::detect(path, &text))
            .map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}:{m}", path.display())),
                other => other,
            })
    }

    /// Parses, fills defaults and validates.
    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self> {
        let user: Value = match format {
            ConfigFormat::Toml => {
                let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
                    let line = e.span().map(|s| line_of_offset(text, s.start));
                    Error::config(format!("{}: {}", fmt_line(line), e.message()))
                })?;
                serde_json::to_value(table).map_err(|e| Error::config(e.to_string()))?
            }
            ConfigFormat::Json => serde_json::from_str(text)
                .map_err(|e| Error::config(format!("{}: {e}", fmt_line(Some(e.line())))))?,
        };
        let family = match user.get("family") {
            Some(Value::String(s)) => s.parse::<Family>().map_err(|e| located(text, format, "family", e))?,
            Some(_) => return Err(located(text, format, "family", Error::config("must be a string"))),
            None => return Err(Error::config("line ?: missing required key `family`")),
        };
        let defaults = serde_json::to_value(Self::defaults(family)).expect("config serializes");
        check_known_keys(&user, &defaults, "").map_err(|path| {
            located(text, format, &path, Error::config("unknown key"))
        })?;
        let mut merged = defaults;
        merge(&mut merged, user);
        let config: Self = serde_path_to_error::deserialize(merged).map_err(|e| {
            let path = e.path().to_string();
            located(text, format, &path, Error::config(e.into_inner().to_string()))
        })?;
        config.validate().map_err(|(path, e)| located(text, format, &path, e))?;
        Ok(config)
    }

    /// Checks every section, returning the dotted path of the offending key.
    fn validate(&self) -> std::result::Result<(), (String, Error)> {
        let field_of = |section: &str, e: Error| {
            let msg = e.to_string();
            let field = msg
                .split_once(": ")
                .map(|(_, rest)| rest)
                .and_then(|rest| rest.split_once(':'))
                .map(|(f, _)| f.trim().to_string())
                .unwrap_or_default();
            let path = if field.is_empty() { section.to_string() } else { format!("{section}.{field}") };
            (path, e)
        };
        self.encoder.validate().map_err(|e| field_of("encoder", e))?;
        self.decoder.validate().map_err(|e| ("decoder".into(), e))?;
        self.probe.validate().map_err(|e| ("probe".into(), e))?;
        if self.decoder.hidden == 0 {
            return Err(("decoder.hidden".into(), Error::config("must be positive")));
        }
        if self.family == Family::Sinusoid {
            self.data.sinusoid.validate().map_err(|e| ("data.sinusoid".into(), e))?;
            if self.data.n_train < 2 || self.data.n_test == 0 {
                return Err((
                    "data.n_train".into(),
                    Error::config("need at least 2 training and 1 test function"),
                ));
            }
        }
        let (lo, hi) = match self.family {
            Family::Sinusoid => (self.encoder.bounds.n_context_min, self.encoder.bounds.n_context_max),
            Family::Mnist => (2, 784),
        };
        if self.eval.shots.is_empty() {
            return Err(("eval.shots".into(), Error::config("must list at least one context size")));
        }
        for &s in &self.eval.shots {
            if s < lo || s > hi {
                return Err(("eval.shots".into(), Error::config(format!("{s} outside [{lo}, {hi}]"))));
            }
        }
        if !(self.eval.noise_sigma >= 0.0 && self.eval.noise_sigma.is_finite()) {
            return Err(("eval.noise_sigma".into(), Error::config("must be non-negative")));
        }
        if self.eval.seeds.is_empty() {
            return Err(("eval.seeds".into(), Error::config("must list at least one seed")));
        }
        for (path, seeds) in [("seed", self.seed.as_slice()), ("eval.seeds", &self.eval.seeds), ("sweep.seeds", &self.sweep.seeds)] {
            if seeds.iter().any(|&s| s > MAX_SEED) {
                return Err((path.into(), Error::config(format!("seeds must be at most {MAX_SEED}"))));
            }
        }
        let s = &self.sweep;
        if s.j_subsets.iter().any(|&j| j < 2) {
            return Err(("sweep.j_subsets".into(), Error::config("every J must be at least 2")));
        }
        if s.temperature.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(("sweep.temperature".into(), Error::config("temperatures must be positive")));
        }
        if s.noise_sigma.iter().any(|&n| !(n >= 0.0 && n.is_finite())) {
            return Err(("sweep.noise_sigma".into(), Error::config("noise levels must be non-negative")));
        }
        Ok(())
    }

    /// Canonical TOML text; parsing it yields `self` again.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// The config seed, which every command requires.
    pub fn require_seed(&self) -> Result<u64> {
        match self.seed {
            None => Err(Error::config("no seed: set `seed` in the config or pass --seed")),
            Some(s) if s > MAX_SEED => Err(Error::config(format!("seed: must be at most {MAX_SEED}"))),
            Some(s) => Ok(s),
        }
    }
}

fn check_known_keys(user: &Value, defaults: &Value, prefix: &str) -> std::result::Result<(), String> {
    if let (Value::Object(u), Value::Object(d)) = (user, defaults) {
        for (k, v) in u {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match d.get(k) {
                Some(dv) => check_known_keys(v, dv, &path)?,
                None if prefix.is_empty() && k == "seed" => {}
                None => return Err(path),
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn fmt_line(line: Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}"),
        None => "line ?".into(),
    }
}

fn located(text: &str, format: ConfigFormat, path: &str, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) => m,
        other => other.to_string(),
    };
    let line = find_key_line(text, format, path);
    Error::config(format!("{}: `{path}`: {msg}", fmt_line(line)))
}

/// Line of the key at dotted `path`: a `key =` line under the matching
/// `[section]`, a `[path]` header, or for JSON the first `"key"` occurrence.
fn find_key_line(text: &str, format: ConfigFormat, path: &str) -> Option<usize> {
    let path = path.split('[').next().unwrap_or(path).trim_end_matches('.');
    let (section, key) = path.rsplit_once('.').unwrap_or(("", path));
    if format == ConfigFormat::Json {
        let needle = format!("\"{key}\"");
        return text.lines().position(|l| l.contains(&needle)).map(|i| i + 1);
    }
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = header.trim().to_string();
            if current == path {
                return Some(i + 1);
            }
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k = k.trim().trim_matches('"');
            let full = if current.is_empty() { k.to_string() } else { format!("{current}.{k}") };
            if full == path || (current == section && k == key) {
                return Some(i + 1);
            }
        }
    }
    None
}
