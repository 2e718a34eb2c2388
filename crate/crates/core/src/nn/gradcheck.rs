/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares the analytic gradient returned by `f` at `params` with
/// central finite differences of its loss, coordinate by coordinate.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(mut f: F, params: &[f64], tolerance: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameter count");
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: params.len(),
        passed: true,
    };
    let mut any_nan = false;
    for k in 0..params.len() {
        let orig = probe[k];
        probe[k] = orig + FD_STEP;
        let (up, _) = f(&probe);
        probe[k] = orig - FD_STEP;
        let (down, _) = f(&probe);
        probe[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        if err.is_nan() {
            any_nan = true;
        }
        if err > report.max_rel_err || (err.is_nan() && !report.max_rel_err.is_nan()) {
            report.max_rel_err = err;
            report.worst_index = k;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = !any_nan && report.max_rel_err < tolerance;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(p: &[f64]) -> (f64, Vec<f64>) {
        let loss = p.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x * x).sum();
        let grad = p.iter().enumerate().map(|(i, x)| 2.0 * (i as f64 + 1.0) * x).collect();
        (loss, grad)
    }

    #[test]
    fn exact_gradient_passes() {
        let r = grad_check(quadratic, &[0.5, -1.0, 2.0], 1e-6);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let broken = |p: &[f64]| {
            let (l, mut g) = quadratic(p);
            g[1] *= 1.01;
            (l, g)
        };
        let r = grad_check(broken, &[0.5, -1.0, 2.0], 1e-4);
        assert!(!r.passed);
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn nan_gradient_is_flagged() {
        let broken = |p: &[f64]| {
            let (l, mut g) = quadratic(p);
            g[0] = f64::NAN;
            (l, g)
        };
        assert!(!grad_check(broken, &[0.5, -1.0], 1e-4).passed);
    }
}
