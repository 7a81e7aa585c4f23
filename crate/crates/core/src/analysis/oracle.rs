//! Exact posteriors on finite toy families, and how closely a trained encoder matches them.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{cosine_sim, train_encoder, TrainedEncoder};
use crate::data::{stream_rng, tag, ContextBounds, ContextSet, FunctionInstance, FunctionKind, TabulatedFunction};
use crate::encoder::{CriticKind, CriticMode, EncoderParams, SetBatch};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, Schedule};
use crate::training::TrainConfig;

/// Grid values are compared with this tolerance when a noiseless observation is scored.
const EXACT_MATCH_TOL: f64 = 1e-12;

/// `M` functions tabulated on a shared 1-D input grid, observed with Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFamily {
    grid: Arc<[f64]>,
    values: Vec<Arc<[f64]>>,
    sigma: f64,
}

impl DiscreteFamily {
    pub fn new(grid: Vec<f64>, values: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if grid.is_empty() || values.len() < 2 {
            return Err(Error::config("a discrete family needs a non-empty grid and at least two functions"));
        }
        if values.iter().any(|v| v.len() != grid.len()) {
            return Err(Error::config("every function must have one value per grid point"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("noise sigma must be non-negative, got {sigma}")));
        }
        if grid.iter().chain(values.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::config("grid and function values must be finite"));
        }
        Ok(Self {
            grid: grid.into(),
            values: values.into_iter().map(Into::into).collect(),
            sigma,
        })
    }

    /// Constant functions `y = c` on the inputs `1/n, 2/n, …, 1` with `n = grid_len`.
    ///
    /// The grid avoids `x = 0` so that an `(x, y) = (0, 0)` point cannot give an
    /// exactly zero encoding at initialization.
    pub fn constants(levels: &[f64], grid_len: usize, sigma: f64) -> Result<Self> {
        if grid_len == 0 {
            return Err(Error::config("grid_len must be positive"));
        }
        let grid = (1..=grid_len).map(|i| i as f64 / grid_len as f64).collect();
        let values = levels.iter().map(|&c| vec![c; grid_len]).collect();
        Self::new(grid, values, sigma)
    }

    /// `y = a·sin(x + b)` for each `(a, b)`, on five points spread over one period.
    pub fn sinusoids(params: &[(f64, f64)], sigma: f64) -> Result<Self> {
        let grid: Vec<f64> = (0..5).map(|i| -std::f64::consts::PI + 0.4 * std::f64::consts::PI * i as f64).collect();
        let values = params
            .iter()
            .map(|&(a, b)| grid.iter().map(|x| a * (x + b).sin()).collect())
            .collect();
        Self::new(grid, values, sigma)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn member(&self, k: usize) -> FunctionInstance {
        FunctionInstance {
            id: k,
            kind: FunctionKind::Tabulated(TabulatedFunction {
                grid: self.grid.clone(),
                values: self.values[k].clone(),
                label: k,
            }),
        }
    }

    /// `n` functions drawn uniformly with replacement from the family.
    pub fn draw_functions(&self, n: usize, seed: u64) -> Vec<FunctionInstance> {
        let mut rng = stream_rng(seed, &[tag("toy-functions")]);
        (0..n)
            .map(|i| {
                let mut f = self.member(rng.random_range(0..self.len()));
                f.id = i;
                f
            })
            .collect()
    }

    /// `log p(O | f_k)`: a product of Gaussian densities, or an exact-match
    /// indicator (0 or −∞) when the family is noiseless.
    pub fn log_likelihood(&self, k: usize, obs: &ContextSet) -> Result<f64> {
        if k >= self.len() {
            return Err(Error::config(format!("function {k} outside a family of {}", self.len())));
        }
        if obs.x_dim() != 1 || obs.y_dim() != 1 {
            return Err(Error::Data("toy observations must be scalar (x, y) pairs".into()));
        }
        let mut total = 0.0;
        for (x, y) in obs.iter() {
            let g = self
                .grid
                .iter()
                .position(|&v| v == x[0])
                .ok_or_else(|| Error::Data(format!("input {} is not on the family grid", x[0])))?;
            let r = y[0] - self.values[k][g];
            if self.sigma == 0.0 {
                if r.abs() > EXACT_MATCH_TOL {
                    return Ok(f64::NEG_INFINITY);
                }
            } else {
                let z = r / self.sigma;
                total += -0.5 * z * z - (self.sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
            }
        }
        Ok(total)
    }

    /// One evaluation episode: `k` functions drawn from the uniform prior, one
    /// observation set of `n_points` from each, and an anchor from a uniformly
    /// chosen one of them.
    pub fn sample_episode<R: Rng + ?Sized>(&self, k: usize, n_points: usize, rng: &mut R) -> Result<Episode> {
        if k < 2 {
            return Err(Error::config("an episode needs at least two candidates"));
        }
        let members: Vec<usize> = (0..k).map(|_| rng.random_range(0..self.len())).collect();
        let observations = members
            .iter()
            .map(|&m| self.member(m).sample_context(n_points, self.sigma, rng))
            .collect::<Result<Vec<_>>>()?;
        let target = rng.random_range(0..k);
        let anchor = self.member(members[target]).sample_context(n_points, self.sigma, rng)?;
        Ok(Episode {
            members,
            target,
            observations,
            anchor,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    /// Family index behind each observation set.
    pub members: Vec<usize>,
    /// Which observation set shares its function with the anchor.
    pub target: usize,
    pub observations: Vec<ContextSet>,
    pub anchor: ContextSet,
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Posterior over which observation set shares the anchor's function, from
/// log-likelihood tables under a uniform prior over the family.
///
/// `obs_ll[k][m] = log p(O^k | f_m)` and `anchor_ll[m] = log p(Ô | f_m)`. Each
/// candidate is scored by the density ratio `p(O^k, Ô) / (p(O^k) p(Ô))`.
pub fn posterior_from_log_likelihoods(obs_ll: &[Vec<f64>], anchor_ll: &[f64]) -> Result<Vec<f64>> {
    let m = anchor_ll.len();
    if obs_ll.len() < 2 || m == 0 || obs_ll.iter().any(|row| row.len() != m) {
        return Err(Error::config("likelihood tables must be K × M with K ≥ 2 and a matching anchor row"));
    }
    if obs_ll.iter().flatten().chain(anchor_ll).any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numerical("log-likelihoods must be finite or −∞".into()));
    }
    let log_ratio: Vec<f64> = obs_ll
        .iter()
        .map(|row| {
            let marginal = log_sum_exp(row.iter().cloned());
            if marginal == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            log_sum_exp(row.iter().zip(anchor_ll).map(|(a, b)| a + b)) - marginal
        })
        .collect();
    let norm = log_sum_exp(log_ratio.iter().cloned());
    if norm == f64::NEG_INFINITY {
        return Err(Error::Numerical(
            "every candidate has zero likelihood of sharing a function with the anchor".into(),
        ));
    }
    Ok(log_ratio.iter().map(|l| (l - norm).exp()).collect())
}

/// Exact `p(i | O^1..O^K, Ô)` for `K = observations.len()` candidates.
pub fn bayes_posterior_oracle(family: &DiscreteFamily, observations: &[ContextSet], anchor: &ContextSet) -> Result<Vec<f64>> {
    let table = |obs: &ContextSet| (0..family.len()).map(|m| family.log_likelihood(m, obs)).collect::<Result<Vec<_>>>();
    let obs_ll = observations.iter().map(table).collect::<Result<Vec<_>>>()?;
    posterior_from_log_likelihoods(&obs_ll, &table(anchor)?)
}

/// `softmax(sim / τ)`, with the maximum subtracted before exponentiating.
pub fn posterior_from_similarities(sim_row: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {temperature}")));
    }
    if sim_row.is_empty() || sim_row.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("similarities must be finite and non-empty".into()));
    }
    let scaled: Vec<f64> = sim_row.iter().map(|s| s / temperature).collect();
    let norm = log_sum_exp(scaled.iter().cloned());
    Ok(scaled.iter().map(|s| (s - norm).exp()).collect())
}

/// Posterior the encoder's critic assigns to each candidate of an episode.
pub fn model_posterior(params: &EncoderParams, episode: &Episode, temperature: f64) -> Result<Vec<f64>> {
    let sets: Vec<&ContextSet> = std::iter::once(&episode.anchor).chain(&episode.observations).collect();
    let z = params.encode_batch(&SetBatch::from_sets(sets)?, CriticMode::Eval)?;
    let sims = (1..z.rows())
        .map(|r| cosine_sim(z.row(0), z.row(r)))
        .collect::<Result<Vec<_>>>()?;
    posterior_from_similarities(&sims, temperature)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Toy training and evaluation settings for the posterior-agreement check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckConfig {
    /// Candidates per evaluation episode.
    pub candidates: usize,
    /// Points in every observation set, at training and evaluation time.
    pub points: usize,
    pub episodes: usize,
    /// Size of the training pool drawn from the family.
    pub n_functions: usize,
    pub train: TrainConfig,
}

impl OracleCheckConfig {
    pub fn new(candidates: usize, points: usize, sigma: f64) -> Self {
        Self {
            candidates,
            points,
            episodes: 500,
            n_functions: 4096,
            train: TrainConfig {
                batch_size: 64,
                epochs: 20,
                lr: 1e-3,
                adam: AdamConfig::default(),
                schedule: Schedule::Cosine,
                d_repr: 16,
                j_subsets: 2,
                temperature: 0.1,
                critic: CriticKind::Nonlinear,
                critic_batch_norm: false,
                bounds: ContextBounds {
                    n_context_min: 2 * points,
                    n_context_max: 2 * points,
                    max_total: 2 * points,
                },
                noise_sigma: sigma,
            },
        }
    }
}

/// Agreement between the trained critic and the exact posterior over held-out episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub episodes: usize,
    pub mean_tv: f64,
    pub max_tv: f64,
    /// Episodes whose exact posterior puts all mass on one candidate.
    pub one_hot_episodes: usize,
    /// Largest TV distance over the one-hot episodes (0 when there are none).
    pub one_hot_max_tv: f64,
    /// Fraction of one-hot episodes where the model's argmax is the true candidate.
    pub one_hot_argmax_agreement: f64,
}

/// Threshold on mean TV distance for a family with observation noise.
pub const ORACLE_TV_THRESHOLD: f64 = 0.1;
/// TV slack allowed on episodes whose exact posterior is one-hot.
pub const ONE_HOT_TV_TOLERANCE: f64 = 1e-3;

impl OracleReport {
    /// Every one-hot episode is ranked correctly and matched within `ONE_HOT_TV_TOLERANCE`.
    pub fn matches_one_hot(&self) -> bool {
        self.one_hot_episodes > 0 && self.one_hot_argmax_agreement == 1.0 && self.one_hot_max_tv < ONE_HOT_TV_TOLERANCE
    }

    pub fn mean_tv_below(&self, threshold: f64) -> bool {
        self.mean_tv < threshold
    }
}

/// Trains the contrastive encoder on functions drawn from the family.
pub fn train_toy_encoder(family: &DiscreteFamily, check: &OracleCheckConfig, seed: u64) -> Result<TrainedEncoder> {
    if check.train.noise_sigma != family.sigma() {
        return Err(Error::config("training noise must equal the family's observation noise"));
    }
    if check.train.j_subsets != 2 || check.train.bounds.n_context_max != 2 * check.points {
        return Err(Error::config("toy training must split contexts of 2·points into two subsets"));
    }
    train_encoder(&family.draw_functions(check.n_functions, seed), &check.train, seed)
}

/// Scores a trained encoder against the exact posterior on fresh episodes.
pub fn oracle_agreement(
    params: &EncoderParams,
    family: &DiscreteFamily,
    check: &OracleCheckConfig,
    seed: u64,
) -> Result<OracleReport> {
    if check.episodes == 0 {
        return Err(Error::config("episodes must be positive"));
    }
    let mut rng = stream_rng(seed, &[tag("oracle-episodes")]);
    let mut tv_sum = 0.0;
    let mut max_tv: f64 = 0.0;
    let mut one_hot = 0;
    let mut one_hot_max_tv: f64 = 0.0;
    let mut agree = 0;
    for _ in 0..check.episodes {
        let ep = family.sample_episode(check.candidates, check.points, &mut rng)?;
        let exact = bayes_posterior_oracle(family, &ep.observations, &ep.anchor)?;
        let model = model_posterior(params, &ep, check.train.temperature)?;
        let tv = total_variation(&exact, &model);
        tv_sum += tv;
        max_tv = max_tv.max(tv);
        if let Some(winner) = exact.iter().position(|&p| p == 1.0) {
            one_hot += 1;
            one_hot_max_tv = one_hot_max_tv.max(tv);
            if argmax(&model) == winner {
                agree += 1;
            }
        }
    }
    Ok(OracleReport {
        episodes: check.episodes,
        mean_tv: tv_sum / check.episodes as f64,
        max_tv,
        one_hot_episodes: one_hot,
        one_hot_max_tv,
        one_hot_argmax_agreement: if one_hot == 0 { 1.0 } else { agree as f64 / one_hot as f64 },
    })
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Trains on the family and evaluates agreement on episodes from an independent stream.
pub fn run_oracle_check(family: &DiscreteFamily, check: &OracleCheckConfig, seed: u64) -> Result<(TrainedEncoder, OracleReport)> {
    let trained = train_toy_encoder(family, check, seed)?;
    let report = oracle_agreement(&trained.params, family, check, seed)?;
    Ok((trained, report))
}
