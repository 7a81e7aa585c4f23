use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Added to vector norms inside the loss so that the gradient stays bounded.
pub const NORM_EPS: f64 = 1e-12;

/// Cosine similarity `aᵀb / (‖a‖‖b‖)`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "cosine similarity of vectors with {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numerical(
            "cosine similarity of a zero vector (degenerate representation)".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Temperature-scaled cosine similarities between anchors (rows) and candidates (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: Matrix,
}

impl SimilarityMatrix {
    pub fn new(anchors: &Matrix, candidates: &Matrix, temperature: f64) -> Result<Self> {
        if temperature <= 0.0 {
            return Err(Error::config(format!("temperature must be positive, got {temperature}")));
        }
        let a = normalize_rows(anchors);
        let b = normalize_rows(candidates);
        let mut scores = a.matmul_nt(&b);
        scores.scale(1.0 / temperature);
        Ok(Self { scores })
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Matrix {
        softmax_rows(&self.scores)
    }
}

fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let n = norm(m.row(r)) + NORM_EPS;
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Softmax of each row, computed with the max subtracted first.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to every input representation, same layout as the input.
    pub grad: Matrix,
}

/// Contrastive loss over `k` functions with `j` subsets each.
///
/// `reps` has `k·j` rows, row `f·j + s` holding subset `s` of function `f`.
/// For every function and subset pair `i < j'`, subset `j'` is the anchor, the
/// `i`-th subsets of all `k` functions are the candidates, and the term is the
/// cross-entropy of picking the same function. The result is the mean over the
/// `k·j(j−1)/2` terms.
pub fn fcrl_loss(reps: &Matrix, k: usize, j: usize, temperature: f64) -> Result<LossOutput> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::config(format!("temperature must be positive, got {temperature}")));
    }
    if k < 2 || j < 2 {
        return Err(Error::config(format!("need at least 2 functions and 2 subsets, got {k} and {j}")));
    }
    if reps.rows() != k * j {
        return Err(Error::config(format!(
            "expected {} representations for {k} functions × {j} subsets, got {}",
            k * j,
            reps.rows()
        )));
    }
    if !reps.is_finite() {
        return Err(Error::Numerical("non-finite representation passed to the loss".into()));
    }
    let d = reps.cols();
    let norms: Vec<f64> = (0..reps.rows()).map(|r| norm(reps.row(r))).collect();
    let unit = normalize_rows(reps);
    let subset = |s: usize| unit.select_rows(&(0..k).map(|f| f * j + s).collect::<Vec<_>>());
    let subsets: Vec<Matrix> = (0..j).map(subset).collect();

    let terms = (k * j * (j - 1) / 2) as f64;
    let coeff = 1.0 / (temperature * terms);
    let mut loss = 0.0;
    let mut d_unit = Matrix::zeros(k * j, d);
    for i in 0..j {
        for jj in i + 1..j {
            let anchors = &subsets[jj];
            let candidates = &subsets[i];
            let mut scores = anchors.matmul_nt(candidates);
            scores.scale(1.0 / temperature);
            let mut d_scores = softmax_rows(&scores);
            for f in 0..k {
                loss += log_sum_exp(scores.row(f)) - scores.get(f, f);
                let v = d_scores.get(f, f) - 1.0;
                d_scores.set(f, f, v);
            }
            d_scores.scale(coeff);
            let d_anchor = d_scores.matmul(candidates);
            let d_cand = d_scores.matmul_tn(anchors);
            for f in 0..k {
                for (g, v) in d_unit.row_mut(f * j + jj).iter_mut().zip(d_anchor.row(f)) {
                    *g += v;
                }
                for (g, v) in d_unit.row_mut(f * j + i).iter_mut().zip(d_cand.row(f)) {
                    *g += v;
                }
            }
        }
    }
    loss /= terms;

    // u = z / (‖z‖ + ε)  ⇒  dz = du / (‖z‖ + ε) − z (zᵀdu) / (‖z‖ (‖z‖ + ε)²)
    let mut grad = Matrix::zeros(k * j, d);
    for r in 0..k * j {
        let z = reps.row(r);
        let du = d_unit.row(r);
        let n = norms[r];
        let denom = n + NORM_EPS;
        let proj: f64 = z.iter().zip(du).map(|(a, b)| a * b).sum();
        let radial = if n > 0.0 { proj / (n * denom * denom) } else { 0.0 };
        for ((g, &zi), &dui) in grad.row_mut(r).iter_mut().zip(z).zip(du) {
            *g = dui / denom - zi * radial;
        }
    }
    Ok(LossOutput { loss, grad })
}
