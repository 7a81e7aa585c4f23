//! Function families and observation sampling.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::rng::{stream_rng, tag};
use super::ContextSet;
use crate::error::{Error, Result};

/// Sinusoids `a · sin(x + b)` with uniformly drawn amplitude and phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidFamily {
    pub amp_range: (f64, f64),
    pub phase_range: (f64, f64),
    pub x_range: (f64, f64),
}

impl Default for SinusoidFamily {
    fn default() -> Self {
        Self {
            amp_range: (0.1, 0.5),
            phase_range: (0.0, std::f64::consts::PI),
            x_range: (-5.0, 5.0),
        }
    }
}

impl SinusoidFamily {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("amp_range", self.amp_range),
            ("phase_range", self.phase_range),
            ("x_range", self.x_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!(
                    "{name} must be a non-degenerate ordered interval, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineParams {
    pub amplitude: f64,
    pub phase: f64,
    pub x_range: (f64, f64),
}

impl SineParams {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }
}

/// A grayscale image seen as a map from normalized pixel coordinates to intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFunction {
    /// Row-major intensities in `[0, 1]`.
    pub pixels: Arc<[f64]>,
    pub side: usize,
    pub label: u8,
}

impl ImageFunction {
    pub fn num_pixels(&self) -> usize {
        self.side * self.side
    }

    /// `(row / (side−1), col / (side−1))`.
    pub fn coordinate(&self, pixel: usize) -> [f64; 2] {
        let scale = (self.side - 1) as f64;
        [
            (pixel / self.side) as f64 / scale,
            (pixel % self.side) as f64 / scale,
        ]
    }
}

/// A function known only on a finite input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedFunction {
    pub grid: Arc<[f64]>,
    pub values: Arc<[f64]>,
    /// Index of this function within its family.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionKind {
    Sinusoid(SineParams),
    Image(ImageFunction),
    Tabulated(TabulatedFunction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionInstance {
    pub id: usize,
    pub kind: FunctionKind,
}

impl FunctionInstance {
    pub fn x_dim(&self) -> usize {
        match self.kind {
            FunctionKind::Image(_) => 2,
            _ => 1,
        }
    }

    pub fn y_dim(&self) -> usize {
        1
    }

    pub fn sine(&self) -> Option<&SineParams> {
        match &self.kind {
            FunctionKind::Sinusoid(p) => Some(p),
            _ => None,
        }
    }

    pub fn image(&self) -> Option<&ImageFunction> {
        match &self.kind {
            FunctionKind::Image(img) => Some(img),
            _ => None,
        }
    }

    pub fn label(&self) -> Option<usize> {
        match &self.kind {
            FunctionKind::Image(img) => Some(img.label as usize),
            FunctionKind::Tabulated(t) => Some(t.label),
            FunctionKind::Sinusoid(_) => None,
        }
    }

    /// Largest number of distinct inputs, if the domain is finite and sampled without replacement.
    pub fn max_distinct_points(&self) -> Option<usize> {
        self.image().map(ImageFunction::num_pixels)
    }

    /// Draws `n` observations `y = f(x) + ξ`, `ξ ~ N(0, σ²)`.
    ///
    /// Sinusoid inputs are uniform on the family's x range, image inputs are
    /// distinct pixels, tabulated inputs are grid points drawn with replacement.
    pub fn sample_context<R: Rng + ?Sized>(
        &self,
        n: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Result<ContextSet> {
        if n == 0 {
            return Err(Error::config("a context needs at least one point"));
        }
        Ok(self.sample_context_target(n, 0, sigma, rng)?.0)
    }

    /// Draws a context and a target set from the same function. Image targets
    /// use pixels disjoint from the context; otherwise the two draws are independent.
    pub fn sample_context_target<R: Rng + ?Sized>(
        &self,
        n_context: usize,
        n_target: usize,
        sigma: f64,
        rng: &mut R,
    ) -> Result<(ContextSet, ContextSet)> {
        let noise = |rng: &mut R| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            sigma * z
        };
        match &self.kind {
            FunctionKind::Sinusoid(p) => {
                let draw = |n: usize, rng: &mut R| {
                    let mut set = ContextSet::with_capacity(1, 1, n);
                    for _ in 0..n {
                        let x = rng.random_range(p.x_range.0..p.x_range.1);
                        let y = p.eval(x) + noise(rng);
                        set.push(&[x], &[y]);
                    }
                    set
                };
                let ctx = draw(n_context, rng);
                let tgt = draw(n_target, rng);
                Ok((ctx, tgt))
            }
            FunctionKind::Image(img) => {
                let total = img.num_pixels();
                if n_context + n_target > total {
                    return Err(Error::config(format!(
                        "cannot draw {} distinct pixels from a {}-pixel image",
                        n_context + n_target,
                        total
                    )));
                }
                let chosen = index::sample(rng, total, n_context + n_target).into_vec();
                let mut ctx = ContextSet::with_capacity(2, 1, n_context);
                let mut tgt = ContextSet::with_capacity(2, 1, n_target);
                for (k, &p) in chosen.iter().enumerate() {
                    let y = img.pixels[p] + noise(rng);
                    let set = if k < n_context { &mut ctx } else { &mut tgt };
                    set.push(&img.coordinate(p), &[y]);
                }
                Ok((ctx, tgt))
            }
            FunctionKind::Tabulated(t) => {
                let draw = |n: usize, rng: &mut R| {
                    let mut set = ContextSet::with_capacity(1, 1, n);
                    for _ in 0..n {
                        let i = rng.random_range(0..t.grid.len());
                        set.push(&[t.grid[i]], &[t.values[i] + noise(rng)]);
                    }
                    set
                };
                let ctx = draw(n_context, rng);
                let tgt = draw(n_target, rng);
                Ok((ctx, tgt))
            }
        }
    }
}

/// Draws one sinusoid from the family.
pub fn sample_sinusoid<R: Rng + ?Sized>(
    family: &SinusoidFamily,
    id: usize,
    rng: &mut R,
) -> FunctionInstance {
    let amplitude = rng.random_range(family.amp_range.0..=family.amp_range.1);
    let phase = rng.random_range(family.phase_range.0..=family.phase_range.1);
    FunctionInstance {
        id,
        kind: FunctionKind::Sinusoid(SineParams {
            amplitude,
            phase,
            x_range: family.x_range,
        }),
    }
}

/// Full 784-pair context of an image function (every pixel exactly once).
pub fn image_as_function(image: &ImageFunction) -> ContextSet {
    let mut set = ContextSet::with_capacity(2, 1, image.num_pixels());
    for p in 0..image.num_pixels() {
        set.push(&image.coordinate(p), &[image.pixels[p]]);
    }
    set
}

/// Allowed context/target sizes of a training or evaluation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBounds {
    pub n_context_min: usize,
    pub n_context_max: usize,
    /// Upper bound on context + target points.
    pub max_total: usize,
}

impl ContextBounds {
    /// `N ∈ [2, 20]`, `M ∈ [0, 20 − N]`.
    pub fn sinusoid() -> Self {
        Self {
            n_context_min: 2,
            n_context_max: 20,
            max_total: 20,
        }
    }

    /// `N ∈ [2, 200]`, at most 400 points in total.
    pub fn image() -> Self {
        Self {
            n_context_min: 2,
            n_context_max: 200,
            max_total: 400,
        }
    }

    pub fn check(&self, n_context: usize, n_target: usize) -> Result<()> {
        if n_context < self.n_context_min || n_context > self.n_context_max {
            return Err(Error::config(format!(
                "n_context {n_context} outside [{}, {}]",
                self.n_context_min, self.n_context_max
            )));
        }
        if n_context + n_target > self.max_total {
            return Err(Error::config(format!(
                "n_target {n_target} exceeds {} − n_context = {}",
                self.max_total,
                self.max_total.saturating_sub(n_context)
            )));
        }
        Ok(())
    }

    /// Draws `N` uniformly in the context range, then `M` uniformly in `[0, max_total − N]`.
    pub fn sample_counts<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let n = rng.random_range(self.n_context_min..=self.n_context_max);
        let m = rng.random_range(0..=self.max_total.saturating_sub(n));
        (n, m)
    }
}

/// Validated context/target split of one function.
pub fn split_context_target<R: Rng + ?Sized>(
    instance: &FunctionInstance,
    n_context: usize,
    n_target: usize,
    sigma: f64,
    bounds: &ContextBounds,
    rng: &mut R,
) -> Result<(ContextSet, ContextSet)> {
    bounds.check(n_context, n_target)?;
    instance.sample_context_target(n_context, n_target, sigma, rng)
}

/// Indexed collection of functions a trainer can draw from.
pub trait FunctionSource: Sync {
    fn len(&self) -> usize;
    fn instance(&self, index: usize) -> FunctionInstance;
    fn x_dim(&self) -> usize;
    fn y_dim(&self) -> usize {
        1
    }
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FunctionSource for Vec<FunctionInstance> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn instance(&self, index: usize) -> FunctionInstance {
        self[index].clone()
    }

    fn x_dim(&self) -> usize {
        self.first().map_or(1, FunctionInstance::x_dim)
    }
}

/// Train/validation/test sinusoid functions, materialized as parameter records.
#[derive(Debug, Clone)]
pub struct SinusoidDataset {
    pub family: SinusoidFamily,
    pub train: Vec<FunctionInstance>,
    pub val: Vec<FunctionInstance>,
    pub test: Vec<FunctionInstance>,
}

impl SinusoidDataset {
    pub fn generate(
        family: SinusoidFamily,
        sizes: (usize, usize, usize),
        seed: u64,
    ) -> Result<Self> {
        family.validate()?;
        let split = |name: &str, n: usize, offset: usize| {
            let mut rng = stream_rng(seed, &[tag("sinusoid-dataset"), tag(name)]);
            (0..n)
                .map(|i| sample_sinusoid(&family, offset + i, &mut rng))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            family,
            train: split("train", sizes.0, 0),
            val: split("val", sizes.1, sizes.0),
            test: split("test", sizes.2, sizes.0 + sizes.1),
        })
    }
}
