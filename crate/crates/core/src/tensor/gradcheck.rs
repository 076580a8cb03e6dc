//! Central finite-difference checks for analytic gradients.

use crate::tensor::{Scalar, Tensor};

/// Worst-case comparison between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Central difference `(f(x+h) - f(x-h)) / 2h` for every entry of every tensor.
pub fn numerical_gradient<F: Scalar>(
    params: &mut [Tensor<F>],
    h: f64,
    mut loss: impl FnMut(&[Tensor<F>]) -> f64,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Vec::with_capacity(params[p].numel());
        for i in 0..params[p].numel() {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = F::from_f64_lossy(orig.to_f64_lossy() + h);
            let up = loss(params);
            params[p].data_mut()[i] = F::from_f64_lossy(orig.to_f64_lossy() - h);
            let down = loss(params);
            params[p].data_mut()[i] = orig;
            grad.push((up - down) / (2.0 * h));
        }
        out.push(grad);
    }
    out
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// near-zero gradients from dominating through cancellation noise.
pub fn compare(analytic: &[Vec<f64>], numeric: &[Vec<f64>], floor: f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len(), "gradient length");
        for (&av, &nv) in a.iter().zip(n) {
            let abs = (av - nv).abs();
            let rel = abs / av.abs().max(nv.abs()).max(floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    report
}
