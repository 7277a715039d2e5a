//! Dense-matrix kernels, seeded RNG, MLPs, gradient checking, snapshots.
//!
//! Everything operates on plain `f64` slices. Reductions run in fixed index
//! order so results are bit-reproducible across runs on the same target.

pub mod grad_check;
pub mod matrix;
pub mod mlp;
pub mod rng;
pub mod snapshot;

pub use grad_check::{compare_grads, finite_diff_grad, GradCheckReport};
pub use matrix::DenseMatrix;
pub use mlp::{Mlp, MlpCache};
pub use rng::SeededRng;
pub use snapshot::{Snapshot, SnapshotWriter};

use crate::error::{PtrError, Result};

/// Numerically stable softmax. Subtracts the max logit before
/// exponentiating; the output sums to 1 up to rounding.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(PtrError::EmptyInput("softmax"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(PtrError::NonFinite("softmax input"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// log Σ exp(x_i), computed against the max logit.
pub fn log_sum_exp(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(PtrError::EmptyInput("log_sum_exp"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(PtrError::NonFinite("log_sum_exp input"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Scales `v` to unit norm. Inputs with norm below `eps` are divided by
/// `eps` instead, so a zero vector stays zero; callers treat those as
/// degenerate (see [`l2_degenerate`]).
pub fn l2_normalize(v: &[f64], eps: f64) -> Vec<f64> {
    let norm = l2_norm(v);
    let denom = norm.max(eps);
    v.iter().map(|x| x / denom).collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// True when `v` is too short to be normalized to unit length.
pub fn l2_degenerate(v: &[f64], eps: f64) -> bool {
    l2_norm(v) < eps
}

/// In-place EMA update `target <- mu*target + (1-mu)*online`. The mu = 0 and
/// mu = 1 endpoints are exact copies, not arithmetic.
pub fn ema_blend(target: &mut [f64], online: &[f64], mu: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(PtrError::ShapeMismatch(format!(
            "ema_blend: target len {} vs online len {}",
            target.len(),
            online.len()
        )));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(PtrError::InvalidArgument(format!(
            "ema_blend: mu must lie in [0, 1], got {mu}"
        )));
    }
    if mu == 1.0 {
        return Ok(());
    }
    if mu == 0.0 {
        target.copy_from_slice(online);
        return Ok(());
    }
    for (t, &o) in target.iter_mut().zip(online.iter()) {
        *t = mu * *t + (1.0 - mu) * o;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ulps_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        for v in &p {
            assert!(ulps_close(*v, 0.25, 1e-15));
        }
    }

    #[test]
    fn softmax_large_gap() {
        let p = softmax(&[20.0, 0.0, 0.0, 0.0]).unwrap();
        let expect = 20f64.exp() / (20f64.exp() + 3.0);
        assert!(ulps_close(p[0], expect, 1e-12));
        assert!(p[0] > 0.999_999_99);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_invariant_to_constant_shift() {
        let a = softmax(&[0.3, -1.2, 2.4]).unwrap();
        let b = softmax(&[0.3 + 100.0, -1.2 + 100.0, 2.4 + 100.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(ulps_close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn log_sum_exp_reproduces_softmax() {
        let logits = [3.0, -7.5, 0.25, 12.0, 11.9];
        let lse = log_sum_exp(&logits).unwrap();
        let p = softmax(&logits).unwrap();
        for (l, q) in logits.iter().zip(&p) {
            assert!(ulps_close((l - lse).exp(), *q, 1e-12));
        }
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let out = l2_normalize(&[3.0, 4.0], 1e-6);
        assert!(ulps_close(out[0], 0.6, 1e-12));
        assert!(ulps_close(out[1], 0.8, 1e-12));
    }

    #[test]
    fn l2_normalize_unit_vector_fixed_point() {
        let v = [0.6, -0.8];
        let out = l2_normalize(&v, 1e-6);
        assert!(ulps_close(out[0], 0.6, 1e-9));
        assert!(ulps_close(out[1], -0.8, 1e-9));
    }

    #[test]
    fn l2_normalize_zero_vector_flagged() {
        let out = l2_normalize(&[0.0, 0.0, 0.0], 1e-6);
        assert!(out.iter().all(|&x| x == 0.0));
        assert!(l2_degenerate(&[0.0, 0.0, 0.0], 1e-6));
        assert!(!l2_degenerate(&[1e-3, 0.0, 0.0], 1e-6));
    }

    #[test]
    fn ema_blend_endpoints_are_exact() {
        let online = vec![0.123456789, -9.87];
        let mut t = vec![5.0, 7.0];
        ema_blend(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, vec![5.0, 7.0]);
        ema_blend(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, online);
    }

    #[test]
    fn ema_blend_tenth_of_percent() {
        let mut t = vec![0.0];
        ema_blend(&mut t, &[1.0], 0.999).unwrap();
        assert!(ulps_close(t[0], 0.001, 1e-12));
    }

    #[test]
    fn ema_blend_is_a_contraction() {
        let online = vec![0.5, -1.5, 2.25, 0.0];
        let target = vec![1.0, 2.0, -0.5, 3.0];
        let mu = 0.999;
        let mut t = target.clone();
        ema_blend(&mut t, &online, mu).unwrap();
        let before: f64 = target
            .iter()
            .zip(&online)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let after: f64 = t
            .iter()
            .zip(&online)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((after - mu * before).abs() <= 1e-14 * before);
    }

    #[test]
    fn ema_blend_shape_and_range_errors() {
        let mut t = vec![0.0, 1.0];
        assert!(ema_blend(&mut t, &[1.0], 0.5).is_err());
        assert!(ema_blend(&mut t, &[1.0, 2.0], 1.5).is_err());
        assert!(ema_blend(&mut t, &[1.0, 2.0], -0.1).is_err());
    }
}
