/// Central-difference gradient of a scalar function, one coordinate at a
/// time: (f(x+h e_i) - f(x-h e_i)) / 2h. The independent oracle used by
/// every backward-pass test in the workspace.
pub fn finite_diff_grad(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Per-coordinate relative error with a small-magnitude floor: coordinates
/// where both gradients sit below 1e-5 only contribute through their
/// absolute difference scaled by that floor.
pub fn compare_grads(analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient vectors must align"
    );
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let scale = a.abs().max(n.abs()).max(1e-5);
        let rel = (a - n).abs() / scale;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = n;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(&mut |x: &[f64]| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn squared_norm_gradient() {
        let g = finite_diff_grad(
            &mut |x: &[f64]| x.iter().map(|v| v * v).sum(),
            &[1.0, 2.0],
            1e-5,
        );
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn compare_flags_worst_coordinate() {
        let report = compare_grads(&[1.0, 2.0, 3.0], &[1.0, 2.2, 3.0]);
        assert_eq!(report.worst_index, 1);
        assert!((report.max_rel_err - 0.2 / 2.2).abs() < 1e-12);
    }

    #[test]
    fn identical_gradients_report_zero() {
        let report = compare_grads(&[0.0, 1e-9], &[0.0, 1e-9]);
        assert_eq!(report.max_rel_err, 0.0);
    }
}
