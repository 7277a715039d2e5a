//! Score-to-weight map and the conservatism guarantees around it.
//!
//! A sample score T becomes a raw multiplier exp(T/beta), is clipped to
//! [w_min, w_max], and is mixed toward 1 by the trust coefficient alpha:
//! w = 1 + alpha (clip(exp(T/beta)) - 1). Batch weights are self-normalized
//! before scaling per-sample gradients, so the weighted loss is a convex
//! combination of per-sample losses. Clipping plus normalization cap how
//! far the induced sample distribution can drift from the dataset: the KL
//! divergence never exceeds log of the ratio of the effective bounds.

use crate::error::{PtrError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    /// Trust mix-in: 0 recovers uniform weighting exactly.
    pub alpha: f64,
    /// Advantage scale on the score.
    pub beta: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.5,
            w_min: 0.25,
            w_max: 4.0,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PtrError::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(PtrError::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        // w_min <= 1 <= w_max keeps T = 0 at exactly unit weight.
        if !(self.w_min > 0.0 && self.w_min <= 1.0 && self.w_max >= 1.0 && self.w_max.is_finite())
        {
            return Err(PtrError::InvalidConfig(format!(
                "clip range must satisfy 0 < w_min <= 1 <= w_max, got [{}, {}]",
                self.w_min, self.w_max
            )));
        }
        Ok(())
    }
}

/// The three stages of one sample's weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightBundle {
    pub raw: f64,
    pub clipped: f64,
    pub mixed: f64,
}

impl WeightBundle {
    /// Unit weight, used for invalid samples and during scorer warmup.
    pub fn unit() -> Self {
        Self {
            raw: 1.0,
            clipped: 1.0,
            mixed: 1.0,
        }
    }
}

/// w = 1 + alpha (clip(exp(T/beta), w_min, w_max) - 1).
///
/// T = 0 produces exactly 1.0 (exp(0) = 1, the clip range straddles 1, and
/// 1 + alpha*0 = 1). Extreme scores saturate at the clip bounds without
/// overflow. alpha = 0 gives bit-exact 1.0 regardless of T.
pub fn weight(t_score: f64, cfg: &WeightConfig) -> Result<WeightBundle> {
    if t_score.is_nan() {
        return Err(PtrError::NonFinite("weight score"));
    }
    let raw = (t_score / cfg.beta).exp();
    let clipped = raw.clamp(cfg.w_min, cfg.w_max);
    let mixed = 1.0 + cfg.alpha * (clipped - 1.0);
    Ok(WeightBundle {
        raw,
        clipped,
        mixed,
    })
}

/// Effective weight range after the alpha mix:
/// (1 + alpha (w_min - 1), 1 + alpha (w_max - 1)).
pub fn effective_bounds(cfg: &WeightConfig) -> (f64, f64) {
    (
        1.0 + cfg.alpha * (cfg.w_min - 1.0),
        1.0 + cfg.alpha * (cfg.w_max - 1.0),
    )
}

/// Upper bound on KL(induced || dataset) for any batch of mixed weights:
/// log(upper/lower) of the effective bounds.
pub fn kl_bound(cfg: &WeightConfig) -> f64 {
    let (lo, hi) = effective_bounds(cfg);
    (hi / lo).ln()
}

/// Range every per-source mass ratio q(m)/pi_m stays inside after
/// clipped tilting: [lower/upper, upper/lower] of the effective bounds.
pub fn source_ratio_bounds(cfg: &WeightConfig) -> (f64, f64) {
    let (lo, hi) = effective_bounds(cfg);
    (lo / hi, hi / lo)
}

/// w_t / sum w: the simplex weights actually applied to per-sample
/// gradients. Errors on empty input or a non-positive sum.
pub fn normalize(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(PtrError::EmptyInput("normalize weights"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(PtrError::NonFinite("batch weights"));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(PtrError::InvalidArgument(
            "weights sum to zero; nothing to normalize".into(),
        ));
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

/// Self-normalized weighted mean: sum_t (w_t / sum w) loss_t. The weights
/// enter as constants; gradient flows only through the losses.
pub fn self_normalized_loss(weights: &[f64], losses: &[f64]) -> Result<f64> {
    if weights.len() != losses.len() {
        return Err(PtrError::ShapeMismatch(format!(
            "self_normalized_loss: {} weights vs {} losses",
            weights.len(),
            losses.len()
        )));
    }
    let norm = normalize(weights)?;
    Ok(norm.iter().zip(losses).map(|(w, l)| w * l).sum())
}

/// Shrinks a mixed weight toward 1 by the future-offset discount:
/// w <- 1 + discount * (w - 1). Identity at discount 1.
pub fn discount_weight(mixed: f64, discount: f64) -> f64 {
    1.0 + discount * (mixed - 1.0)
}

/// KL divergence of the normalized weight distribution from uniform:
/// sum_t q_t log(q_t N) with q = w / sum w.
pub fn empirical_kl(weights: &[f64]) -> Result<f64> {
    let q = normalize(weights)?;
    let n = q.len() as f64;
    let mut kl = 0.0;
    for &qt in &q {
        if qt > 0.0 {
            kl += qt * (qt * n).ln();
        }
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::phase;
    use crate::numerics::SeededRng;

    #[test]
    fn raw_weight_examples() {
        let cfg = WeightConfig::default();
        // T = ln 8, beta = 1.5: exp(ln 8 / 1.5) = 8^(2/3) = 4, right at the clip
        let w = weight(8f64.ln(), &cfg).unwrap();
        assert!((w.raw - 4.0).abs() < 1e-12);
        assert_eq!(w.clipped, w.clipped.clamp(0.25, 4.0));
        // T = -3: exp(-2) ~ 0.135 clips up to 0.25
        let w = weight(-3.0, &cfg).unwrap();
        assert!((w.raw - (-2.0f64).exp()).abs() < 1e-12);
        assert_eq!(w.clipped, 0.25);
        assert_eq!(w.mixed, 0.25);
    }

    #[test]
    fn discount_pulls_weights_toward_unit() {
        assert_eq!(discount_weight(4.0, 1.0), 4.0);
        assert_eq!(discount_weight(4.0, 0.0), 1.0);
        assert!((discount_weight(4.0, 0.5) - 2.5).abs() < 1e-15);
        assert!((discount_weight(0.25, 0.5) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn zero_score_is_exactly_unit() {
        let cfg = WeightConfig::default();
        let w = weight(0.0, &cfg).unwrap();
        assert_eq!(w.raw.to_bits(), 1.0f64.to_bits());
        assert_eq!(w.clipped.to_bits(), 1.0f64.to_bits());
        assert_eq!(w.mixed.to_bits(), 1.0f64.to_bits());
    }

    #[test]
    fn alpha_zero_is_exactly_unit_for_any_score() {
        let cfg = WeightConfig {
            alpha: 0.0,
            ..WeightConfig::default()
        };
        for t in [-1e6, -3.7, 0.0, 0.42, 5.0, 1e6] {
            let w = weight(t, &cfg).unwrap();
            assert_eq!(w.mixed.to_bits(), 1.0f64.to_bits(), "t = {t}");
        }
    }

    #[test]
    fn extreme_scores_saturate_without_overflow() {
        let cfg = WeightConfig::default();
        let hi = weight(1e6, &cfg).unwrap();
        assert_eq!(hi.clipped, 4.0);
        assert_eq!(hi.mixed, 4.0);
        let lo = weight(-1e6, &cfg).unwrap();
        assert_eq!(lo.clipped, 0.25);
        assert_eq!(lo.mixed, 0.25);
        assert!(weight(f64::NAN, &cfg).is_err());
    }

    #[test]
    fn weight_is_monotone_in_score() {
        let cfg = WeightConfig {
            alpha: 0.7,
            ..WeightConfig::default()
        };
        let mut r = SeededRng::stream(5, phase::INIT, 0);
        for _ in 0..10_000 {
            let a = r.uniform_in(-10.0, 10.0);
            let b = r.uniform_in(-10.0, 10.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let wl = weight(lo, &cfg).unwrap().mixed;
            let wh = weight(hi, &cfg).unwrap().mixed;
            assert!(wl <= wh, "monotonicity broke at ({lo}, {hi})");
        }
    }

    #[test]
    fn mixed_weight_respects_effective_bounds() {
        for (ix, alpha) in [0.0, 0.25, 0.5, 1.0].into_iter().enumerate() {
            let cfg = WeightConfig {
                alpha,
                ..WeightConfig::default()
            };
            let (lo, hi) = effective_bounds(&cfg);
            let mut r = SeededRng::stream(6, phase::INIT, ix as u64);
            for _ in 0..1000 {
                let w = weight(r.uniform_in(-50.0, 50.0), &cfg).unwrap();
                assert!(w.mixed >= lo - 1e-15 && w.mixed <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn kl_bound_at_defaults_is_log16() {
        let cfg = WeightConfig::default();
        assert!((kl_bound(&cfg) - 16f64.ln()).abs() < 1e-12);
        assert!((kl_bound(&cfg) - 2.772589).abs() < 1e-4);
        let half = WeightConfig {
            alpha: 0.5,
            ..WeightConfig::default()
        };
        // bounds become [0.625, 2.5], ratio 4
        assert!((kl_bound(&half) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn source_ratio_bounds_at_defaults() {
        let (lo, hi) = source_ratio_bounds(&WeightConfig::default());
        assert!((lo - 1.0 / 16.0).abs() < 1e-15);
        assert!((hi - 16.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_sums_to_one() {
        let cfg = WeightConfig::default();
        let mut r = SeededRng::stream(7, phase::INIT, 1);
        for _ in 0..1000 {
            let n = 1 + r.below(64);
            let ws: Vec<f64> = (0..n)
                .map(|_| weight(r.uniform_in(-8.0, 8.0), &cfg).unwrap().mixed)
                .collect();
            let q = normalize(&ws).unwrap();
            let sum: f64 = q.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert!(normalize(&[]).is_err());
        assert!(normalize(&[0.0, 0.0]).is_err());
        assert!(normalize(&[f64::NAN]).is_err());
    }

    #[test]
    fn self_normalized_loss_example() {
        let v = self_normalized_loss(&[4.0, 0.25], &[1.0, 0.0]).unwrap();
        assert!((v - 16.0 / 17.0).abs() < 1e-9);
        assert!((v - 0.94118).abs() < 1e-5);
        // all-equal weights reduce to the plain mean
        let v = self_normalized_loss(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_kl_frozen_example() {
        // q = [16/17, 1/17] against uniform over 2:
        // (16/17) ln(32/17) + (1/17) ln(2/17) = 0.46943 (direct evaluation)
        let kl = empirical_kl(&[4.0, 0.25]).unwrap();
        let q0 = 16.0_f64 / 17.0;
        let q1 = 1.0_f64 / 17.0;
        let oracle = q0 * (2.0 * q0).ln() + q1 * (2.0 * q1).ln();
        assert!((kl - oracle).abs() < 1e-15);
        assert!((kl - 0.46943).abs() < 1e-5);
        // uniform weights give exactly zero
        assert_eq!(empirical_kl(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn empirical_kl_never_exceeds_bound() {
        let cfg = WeightConfig::default();
        let bound = kl_bound(&cfg);
        let mut r = SeededRng::stream(8, phase::INIT, 2);
        for _ in 0..10_000 {
            let n = 2 + r.below(63);
            let ws: Vec<f64> = (0..n)
                .map(|_| weight(r.uniform_in(-20.0, 20.0), &cfg).unwrap().mixed)
                .collect();
            let kl = empirical_kl(&ws).unwrap();
            assert!(kl <= bound + 1e-12, "kl {kl} exceeded bound {bound}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(WeightConfig::default().validate().is_ok());
        let bad = WeightConfig {
            alpha: 1.5,
            ..WeightConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = WeightConfig {
            w_min: 0.0,
            ..WeightConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = WeightConfig {
            w_min: 1.5,
            ..WeightConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = WeightConfig {
            beta: 0.0,
            ..WeightConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
