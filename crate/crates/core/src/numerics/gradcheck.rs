//! Central finite-difference gradient checking.

/// Denominator floor of the relative error: components whose analytic and
/// numerical gradients are both below this magnitude are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numerical: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error < tol
    }
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// The relative error of each component is
/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    perturbation: f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numerical: 0.0,
        checked: params.len(),
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + perturbation;
        let plus = loss(&theta);
        theta[i] = orig - perturbation;
        let minus = loss(&theta);
        theta[i] = orig;
        let numerical = (plus - minus) / (2.0 * perturbation);
        let a = analytic[i];
        let denom = a.abs().max(numerical.abs()).max(REL_ERROR_FLOOR);
        let rel = (a - numerical).abs() / denom;
        if rel > report.max_relative_error || rel.is_nan() {
            report.max_relative_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst_index = i;
            report.analytic = a;
            report.numerical = numerical;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let theta = [0.3, -1.2, 2.5, 0.0, 7.0];
        let r = grad_check(
            |p| 0.5 * p.iter().map(|v| v * v).sum::<f64>(),
            &theta,
            &theta,
            1e-6,
        );
        assert!(r.max_relative_error < 1e-8, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let theta = [1.0, 2.0];
        let r = grad_check(|p| p[0] * p[1], &theta, &[2.0, 2.0], 1e-6);
        assert!(!r.passes(1e-4));
        assert_eq!(r.worst_index, 1);
    }
}
