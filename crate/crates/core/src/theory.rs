//! Independent numerical verification of the three structural claims
//! behind the weighting rule, plus the conservatism bound checks.
//!
//! 1. With a shared-context base density, the identification posterior
//!    over candidates reduces to normalized density ratios, so an
//!    InfoNCE-style softmax over log-ratio logits recovers exact Bayes
//!    (any additive logit constant cancels).
//! 2. The expected sample score under matched data converges, as the
//!    negative count K grows, to the KL divergence between the matched
//!    and the negative transition distributions, and every single-draw
//!    score obeys |T*| <= log(C/c) when density ratios live in [c, C].
//! 3. Exponential tilting of a mixture reweights each source in
//!    proportion to its moment generating function at 1/beta; clipping
//!    confines every per-source mass ratio to a fixed interval.
//!
//! Everything here goes through its own ratio arithmetic, not the engine's
//! scoring path, so the two routes check each other.

use crate::error::{PtrError, Result};
use crate::numerics::rng::phase;
use crate::numerics::SeededRng;
use crate::reweight::{self, WeightConfig};
use serde::{Deserialize, Serialize};

/// A matched/negative distribution pair over a finite outcome space,
/// with elementwise density ratios.
#[derive(Debug, Clone)]
pub struct RatioPair {
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub ratio: Vec<f64>,
}

impl RatioPair {
    pub fn new(p_plus: Vec<f64>, p_minus: Vec<f64>) -> Result<Self> {
        if p_plus.len() != p_minus.len() || p_plus.is_empty() {
            return Err(PtrError::ShapeMismatch(
                "ratio pair needs equal nonempty supports".into(),
            ));
        }
        for (a, b) in p_plus.iter().zip(&p_minus) {
            if !(a.is_finite() && b.is_finite()) || *a < 0.0 || *b <= 0.0 {
                return Err(PtrError::InvalidArgument(
                    "ratio pair needs p_plus >= 0 and p_minus > 0".into(),
                ));
            }
        }
        let ratio = p_plus.iter().zip(&p_minus).map(|(a, b)| a / b).collect();
        Ok(Self {
            p_plus,
            p_minus,
            ratio,
        })
    }

    pub fn ratio_floor(&self) -> f64 {
        self.ratio.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn ratio_ceil(&self) -> f64 {
        self.ratio.iter().copied().fold(0.0, f64::max)
    }
}

/// Exact Bayes posterior over one matched draw and K negatives when every
/// candidate shares the same context base density: r_j / sum_m r_m.
/// Deliberately computed on the raw ratios, no exp/log round trip.
pub fn bayes_posterior(ratios: &[f64]) -> Result<Vec<f64>> {
    if ratios.is_empty() {
        return Err(PtrError::EmptyInput("bayes_posterior"));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(PtrError::InvalidArgument(
            "bayes_posterior needs strictly positive finite ratios".into(),
        ));
    }
    let sum: f64 = ratios.iter().sum();
    Ok(ratios.iter().map(|r| r / sum).collect())
}

/// KL(p || q) in nats. Terms with p_i = 0 contribute zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(PtrError::ShapeMismatch("kl_divergence supports".into()));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(PtrError::InvalidArgument(
                    "kl_divergence: p puts mass where q has none".into(),
                ));
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum()
}

/// KL to the uniform distribution, computed directly as sum p log(p n).
/// Identically log n - H(p); the verification suite checks the identity.
pub fn kl_to_uniform(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * (x * n).ln())
        .sum()
}

/// Random distribution on `n` outcomes: normalized unit-rate exponential
/// draws (flat Dirichlet).
pub fn random_simplex(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let sum: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|d| *d /= sum);
    draws
}

/// Rejection-samples a distribution pair until every density ratio lies in
/// [c_min, c_max].
pub fn sample_ratio_pair(
    n: usize,
    c_min: f64,
    c_max: f64,
    rng: &mut SeededRng,
) -> Result<RatioPair> {
    if n < 2 {
        return Err(PtrError::InvalidArgument(
            "ratio pair support must be >= 2".into(),
        ));
    }
    for _ in 0..1_000_000 {
        let p_plus = random_simplex(n, rng);
        let p_minus = random_simplex(n, rng);
        let pair = RatioPair::new(p_plus, p_minus)?;
        if pair.ratio_floor() >= c_min && pair.ratio_ceil() <= c_max {
            return Ok(pair);
        }
    }
    Err(PtrError::InvalidArgument(format!(
        "rejection sampling failed to find ratios within [{c_min}, {c_max}] for support {n}"
    )))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExpectedScoreEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_draws: u64,
    /// Largest |T*| seen across all draws.
    pub max_abs_t: f64,
}

/// Monte Carlo estimate of E[T*] for one matched draw against K negatives
/// drawn from the mismatched distribution.
///
/// Per draw: y0 ~ p_plus, a multinomial count vector over the support for
/// the K negatives (sequential binomial conditioning), then
/// T* = log r(y0) - log[(r(y0) + sum_j n_j r_j) / (K+1)].
pub fn mc_expected_score(
    pair: &RatioPair,
    k: usize,
    n_draws: u64,
    rng: &mut SeededRng,
) -> Result<ExpectedScoreEstimate> {
    if n_draws == 0 {
        return Err(PtrError::EmptyInput("mc_expected_score draws"));
    }
    let support = pair.ratio.len();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut max_abs = 0.0f64;
    let mut counts = vec![0u64; support];
    for _ in 0..n_draws {
        let y0 = rng.categorical(&pair.p_plus);
        multinomial_counts(&pair.p_minus, k as u64, &mut counts, rng);
        let mut pooled = pair.ratio[y0];
        for (c, r) in counts.iter().zip(&pair.ratio) {
            pooled += *c as f64 * r;
        }
        let a_k = pooled / (k as f64 + 1.0);
        let t = pair.ratio[y0].ln() - a_k.ln();
        sum += t;
        sum_sq += t * t;
        max_abs = max_abs.max(t.abs());
    }
    let n = n_draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(ExpectedScoreEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        n_draws,
        max_abs_t: max_abs,
    })
}

/// Multinomial(k, p) by sequential binomial conditioning; exact and O(|p|).
fn multinomial_counts(p: &[f64], k: u64, out: &mut [u64], rng: &mut SeededRng) {
    let mut remaining = k;
    let mut mass_left = 1.0;
    let last = p.len() - 1;
    for j in 0..p.len() {
        if j == last {
            out[j] = remaining;
            break;
        }
        if remaining == 0 {
            out[j] = 0;
            continue;
        }
        let cond = (p[j] / mass_left).clamp(0.0, 1.0);
        let c = rng.binomial(remaining, cond);
        out[j] = c;
        remaining -= c;
        mass_left -= p[j];
        if mass_left <= 0.0 {
            // numerical exhaustion: dump the rest in the next bucket
            for slot in out.iter_mut().take(last + 1).skip(j + 1) {
                *slot = 0;
            }
            out[last] += remaining;
            break;
        }
    }
}

/// One mixture source: a finite score distribution given as
/// (value, probability) pairs.
#[derive(Debug, Clone)]
pub struct SourceScores {
    pub outcomes: Vec<(f64, f64)>,
}

impl SourceScores {
    pub fn point_mass(value: f64) -> Self {
        Self {
            outcomes: vec![(value, 1.0)],
        }
    }

    /// E[exp(J / beta)].
    pub fn mgf(&self, beta: f64) -> f64 {
        self.outcomes
            .iter()
            .map(|(v, p)| p * (v / beta).exp())
            .sum()
    }
}

/// Closed-form tilted source marginal:
/// q(m) = pi_m MGF_m(1/beta) / sum_j pi_j MGF_j(1/beta).
pub fn mixture_tilt_closed_form(
    priors: &[f64],
    sources: &[SourceScores],
    beta: f64,
) -> Result<Vec<f64>> {
    if priors.len() != sources.len() || priors.is_empty() {
        return Err(PtrError::ShapeMismatch("mixture sizes".into()));
    }
    let terms: Vec<f64> = priors
        .iter()
        .zip(sources)
        .map(|(pi, s)| pi * s.mgf(beta))
        .collect();
    let total: f64 = terms.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(PtrError::NonFinite("mixture tilt normalizer"));
    }
    Ok(terms.iter().map(|t| t / total).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct MixtureMcResult {
    /// Weighted mass per source, normalized.
    pub q: Vec<f64>,
    /// Empirical source frequency.
    pub pi_hat: Vec<f64>,
    /// q(m) / pi_hat(m).
    pub mass_ratio: Vec<f64>,
}

/// Monte Carlo tilted source marginal: draw a source from the prior, draw
/// a score, weight by exp(J/beta) (optionally clipped), and normalize the
/// per-source weight masses.
pub fn mc_mixture_proportions(
    priors: &[f64],
    sources: &[SourceScores],
    beta: f64,
    n_samples: u64,
    clip: Option<(f64, f64)>,
    rng: &mut SeededRng,
) -> Result<MixtureMcResult> {
    if priors.len() != sources.len() || priors.is_empty() {
        return Err(PtrError::ShapeMismatch("mixture sizes".into()));
    }
    if n_samples == 0 {
        return Err(PtrError::EmptyInput("mixture samples"));
    }
    let m = priors.len();
    let mut mass = vec![0.0f64; m];
    let mut count = vec![0u64; m];
    for _ in 0..n_samples {
        let src = rng.categorical(priors);
        let probs: Vec<f64> = sources[src].outcomes.iter().map(|(_, p)| *p).collect();
        let j = sources[src].outcomes[rng.categorical(&probs)].0;
        let mut w = (j / beta).exp();
        if let Some((lo, hi)) = clip {
            w = w.clamp(lo, hi);
        }
        mass[src] += w;
        count[src] += 1;
    }
    let total_mass: f64 = mass.iter().sum();
    let q: Vec<f64> = mass.iter().map(|s| s / total_mass).collect();
    let pi_hat: Vec<f64> = count
        .iter()
        .map(|&c| c as f64 / n_samples as f64)
        .collect();
    let mass_ratio = q
        .iter()
        .zip(&pi_hat)
        .map(|(a, b)| if *b > 0.0 { a / b } else { f64::NAN })
        .collect();
    Ok(MixtureMcResult {
        q,
        pi_hat,
        mass_ratio,
    })
}

// --- verification suite -------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub prop1_pairs: usize,
    pub prop1_max_support: usize,
    pub prop1_tol: f64,
    pub prop2_k: usize,
    pub prop2_draws: u64,
    pub prop2_tol: f64,
    pub prop2_trend_ks: Vec<usize>,
    pub prop2_trend_seeds: u64,
    pub prop2_trend_draws: u64,
    pub prop3_samples: u64,
    pub prop3_tol: f64,
    /// Density-ratio floor and ceiling for random pair generation.
    pub ratio_floor: f64,
    pub ratio_ceil: f64,
    pub entropy_max_support: usize,
    pub entropy_tol: f64,
    /// Random weight batches for the empirical KL bound check.
    pub bound_batches: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            prop1_pairs: 100,
            prop1_max_support: 8,
            prop1_tol: 1e-12,
            prop2_k: 4096,
            prop2_draws: 200_000,
            prop2_tol: 0.02,
            prop2_trend_ks: vec![8, 64, 512, 4096],
            prop2_trend_seeds: 10,
            prop2_trend_draws: 1_000_000,
            prop3_samples: 100_000,
            prop3_tol: 0.01,
            ratio_floor: 0.1,
            ratio_ceil: 10.0,
            entropy_max_support: 64,
            entropy_tol: 1e-12,
            bound_batches: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// Worst observed deviation (meaning depends on the check).
    pub observed: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn leq(name: &str, observed: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass: observed <= threshold,
            observed,
            threshold,
            detail,
        }
    }

    fn flag(name: &str, pass: bool, observed: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            observed,
            threshold,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
}

/// The reference pair used by the convergence checks: a skewed matched
/// transition against a uniform negative distribution over three outcomes.
pub fn reference_pair() -> RatioPair {
    RatioPair::new(vec![0.7, 0.2, 0.1], vec![1.0 / 3.0; 3]).expect("static pair is valid")
}

/// Runs every verification check and collects a report. Deterministic
/// given (cfg, seed).
pub fn run_verification(cfg: &VerifyConfig, seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();

    // Claim 1: softmax over log-ratio logits equals direct ratio
    // normalization, for any additive logit constant.
    {
        let mut worst = 0.0f64;
        let mut worst_shift = 0.0f64;
        for i in 0..cfg.prop1_pairs {
            let mut rng = SeededRng::stream(seed, phase::THEORY, 10_000 + i as u64);
            let n = 2 + rng.below(cfg.prop1_max_support.saturating_sub(1).max(1));
            let pair = sample_ratio_pair(n, cfg.ratio_floor, cfg.ratio_ceil, &mut rng)?;
            let direct = bayes_posterior(&pair.ratio)?;
            let b = rng.uniform_in(-5.0, 5.0);
            let logits: Vec<f64> = pair.ratio.iter().map(|r| r.ln() + b).collect();
            let via_softmax = crate::numerics::softmax(&logits)?;
            for (a, s) in direct.iter().zip(&via_softmax) {
                worst = worst.max((a - s).abs());
            }
            // explicit shift invariance at a second offset
            let b2 = rng.uniform_in(-5.0, 5.0);
            let logits2: Vec<f64> = pair.ratio.iter().map(|r| r.ln() + b2).collect();
            let via_softmax2 = crate::numerics::softmax(&logits2)?;
            for (a, s) in via_softmax.iter().zip(&via_softmax2) {
                worst_shift = worst_shift.max((a - s).abs());
            }
        }
        checks.push(CheckResult::leq(
            "posterior_matches_normalized_ratios",
            worst,
            cfg.prop1_tol,
            format!("{} random pairs, direct vs softmax route", cfg.prop1_pairs),
        ));
        checks.push(CheckResult::leq(
            "posterior_invariant_to_logit_shift",
            worst_shift,
            cfg.prop1_tol,
            "softmax posteriors under two random additive constants".into(),
        ));
    }

    // Claim 2: E[T*] -> KL(p+ || p-) with bounded per-draw scores.
    {
        let pair = reference_pair();
        let oracle = kl_divergence(&pair.p_plus, &pair.p_minus)?;
        let mut rng = SeededRng::stream(seed, phase::THEORY, 20_000);
        let est = mc_expected_score(&pair, cfg.prop2_k, cfg.prop2_draws, &mut rng)?;
        checks.push(CheckResult::leq(
            "expected_score_matches_kl",
            (est.estimate - oracle).abs(),
            cfg.prop2_tol,
            format!(
                "K = {}, {} draws, estimate {:.6} vs KL {:.6} (se {:.2e})",
                cfg.prop2_k, cfg.prop2_draws, est.estimate, oracle, est.std_error
            ),
        ));
        let t_bound = (pair.ratio_ceil() / pair.ratio_floor()).ln();
        checks.push(CheckResult::leq(
            "per_draw_score_bound",
            est.max_abs_t,
            t_bound + 1e-12,
            format!("max |T*| vs log(C/c) = {t_bound:.6}"),
        ));

        // error trend over K, averaged over fixed seeds
        let mut trend = Vec::with_capacity(cfg.prop2_trend_ks.len());
        for (ki, &k) in cfg.prop2_trend_ks.iter().enumerate() {
            let mut acc = 0.0;
            for s in 0..cfg.prop2_trend_seeds {
                let mut rng = SeededRng::stream(
                    seed,
                    phase::THEORY,
                    21_000 + (ki as u64) * 1000 + s,
                );
                let est = mc_expected_score(&pair, k, cfg.prop2_trend_draws, &mut rng)?;
                acc += (est.estimate - oracle).abs();
            }
            trend.push(acc / cfg.prop2_trend_seeds as f64);
        }
        let monotone = trend.windows(2).all(|w| w[1] <= w[0]);
        let worst_step = trend
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(CheckResult::flag(
            "expected_score_error_shrinks_with_k",
            monotone,
            worst_step,
            0.0,
            format!(
                "mean |estimate - KL| over {} seeds at K = {:?}: {:?}",
                cfg.prop2_trend_seeds, cfg.prop2_trend_ks, trend
            ),
        ));
    }

    // Claim 3: tilted mixture marginal.
    {
        let beta = WeightConfig::default().beta;
        let priors = vec![0.5, 0.5];
        let sources = vec![
            SourceScores::point_mass(beta * 2f64.ln()),
            SourceScores::point_mass(0.0),
        ];
        let closed = mixture_tilt_closed_form(&priors, &sources, beta)?;
        let exact_err = (closed[0] - 2.0 / 3.0)
            .abs()
            .max((closed[1] - 1.0 / 3.0).abs());
        checks.push(CheckResult::leq(
            "mixture_tilt_closed_form",
            exact_err,
            1e-12,
            format!("doubled source: q = {closed:?} vs [2/3, 1/3]"),
        ));

        let mut rng = SeededRng::stream(seed, phase::THEORY, 30_000);
        let mc = mc_mixture_proportions(&priors, &sources, beta, cfg.prop3_samples, None, &mut rng)?;
        let mc_err = closed
            .iter()
            .zip(&mc.q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        checks.push(CheckResult::leq(
            "mixture_tilt_monte_carlo",
            mc_err,
            cfg.prop3_tol,
            format!("{} samples, q = {:?}", cfg.prop3_samples, mc.q),
        ));

        let wcfg = WeightConfig::default();
        let (rlo, rhi) = reweight::source_ratio_bounds(&wcfg);
        let mut rng = SeededRng::stream(seed, phase::THEORY, 30_001);
        let clipped = mc_mixture_proportions(
            &priors,
            &sources,
            beta,
            cfg.prop3_samples,
            Some((wcfg.w_min, wcfg.w_max)),
            &mut rng,
        )?;
        let in_range = clipped
            .mass_ratio
            .iter()
            .all(|r| r.is_finite() && *r >= rlo - 1e-12 && *r <= rhi + 1e-12);
        let worst_ratio = clipped
            .mass_ratio
            .iter()
            .copied()
            .fold(0.0f64, |a, b| a.max(b.abs()));
        checks.push(CheckResult::flag(
            "clipped_mass_ratios_bounded",
            in_range,
            worst_ratio,
            rhi,
            format!("ratios {:?} must stay within [{rlo:.6}, {rhi:.6}]", clipped.mass_ratio),
        ));
    }

    // Entropy lens: KL to uniform is log n minus entropy, exactly.
    {
        let mut worst = 0.0f64;
        let mut rng = SeededRng::stream(seed, phase::THEORY, 40_000);
        for n in 2..=cfg.entropy_max_support {
            let p = random_simplex(n, &mut rng);
            let direct = kl_to_uniform(&p);
            let lens = (n as f64).ln() - entropy(&p);
            worst = worst.max((direct - lens).abs());
            let uniform = vec![1.0 / n as f64; n];
            let via_kl = kl_divergence(&p, &uniform)?;
            worst = worst.max((direct - via_kl).abs());
        }
        checks.push(CheckResult::leq(
            "entropy_lens_identity",
            worst,
            cfg.entropy_tol,
            format!("supports 2..={}", cfg.entropy_max_support),
        ));
    }

    // Conservatism bounds on the weight map itself.
    {
        let wcfg = WeightConfig::default();
        let bound = reweight::kl_bound(&wcfg);
        checks.push(CheckResult::leq(
            "kl_budget_at_defaults",
            (bound - 16f64.ln()).abs(),
            1e-12,
            format!("log(w_hi/w_lo) = {bound:.6}, printed as 2.7726"),
        ));
        let half = WeightConfig {
            alpha: 0.5,
            ..WeightConfig::default()
        };
        checks.push(CheckResult::leq(
            "kl_budget_alpha_half",
            (reweight::kl_bound(&half) - 4f64.ln()).abs(),
            1e-12,
            "alpha = 0.5 shrinks the budget to ln 4".into(),
        ));

        let mut rng = SeededRng::stream(seed, phase::THEORY, 50_000);
        let mut worst_excess = f64::NEG_INFINITY;
        for _ in 0..cfg.bound_batches {
            let n = 2 + rng.below(63);
            let ws: Vec<f64> = (0..n)
                .map(|_| {
                    reweight::weight(rng.uniform_in(-20.0, 20.0), &wcfg)
                        .map(|w| w.mixed)
                })
                .collect::<Result<_>>()?;
            let kl = reweight::empirical_kl(&ws)?;
            worst_excess = worst_excess.max(kl - bound);
        }
        checks.push(CheckResult::leq(
            "empirical_kl_within_budget",
            worst_excess,
            1e-12,
            format!("{} random weight batches", cfg.bound_batches),
        ));
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        seed,
        pass,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(ix: u64) -> SeededRng {
        SeededRng::stream(2026, phase::THEORY, ix)
    }

    #[test]
    fn bayes_posterior_example() {
        let p = bayes_posterior(&[1.5, 0.9, 0.6]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.3).abs() < 1e-15);
        assert!((p[2] - 0.2).abs() < 1e-15);
        assert!(bayes_posterior(&[]).is_err());
        assert!(bayes_posterior(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn posterior_agrees_with_softmax_route() {
        let mut r = rng(1);
        for _ in 0..100 {
            let n = 2 + r.below(7);
            let pair = sample_ratio_pair(n, 0.1, 10.0, &mut r).unwrap();
            let direct = bayes_posterior(&pair.ratio).unwrap();
            let b = r.uniform_in(-8.0, 8.0);
            let logits: Vec<f64> = pair.ratio.iter().map(|x| x.ln() + b).collect();
            let soft = crate::numerics::softmax(&logits).unwrap();
            for (a, s) in direct.iter().zip(&soft) {
                assert!((a - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reference_pair_kl_is_0_2968() {
        let pair = reference_pair();
        let kl = kl_divergence(&pair.p_plus, &pair.p_minus).unwrap();
        let oracle = 0.7 * (2.1f64).ln() + 0.2 * (0.6f64).ln() + 0.1 * (0.3f64).ln();
        assert!((kl - oracle).abs() < 1e-15);
        assert!((kl - 0.2968).abs() < 1e-4);
    }

    #[test]
    fn sampled_pairs_respect_ratio_box() {
        let mut r = rng(2);
        for _ in 0..200 {
            let pair = sample_ratio_pair(2 + r.below(7), 0.1, 10.0, &mut r).unwrap();
            assert!(pair.ratio_floor() >= 0.1);
            assert!(pair.ratio_ceil() <= 10.0);
            let sp: f64 = pair.p_plus.iter().sum();
            let sm: f64 = pair.p_minus.iter().sum();
            assert!((sp - 1.0).abs() < 1e-12);
            assert!((sm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn multinomial_counts_sum_to_k_and_match_marginals() {
        let mut r = rng(3);
        let p = [0.5, 0.3, 0.2];
        let mut counts = vec![0u64; 3];
        let mut totals = [0u64; 3];
        let reps = 20_000;
        for _ in 0..reps {
            multinomial_counts(&p, 64, &mut counts, &mut r);
            assert_eq!(counts.iter().sum::<u64>(), 64);
            for (t, c) in totals.iter_mut().zip(&counts) {
                *t += c;
            }
        }
        for (j, &pj) in p.iter().enumerate() {
            let freq = totals[j] as f64 / (64.0 * reps as f64);
            assert!(
                (freq - pj).abs() < 0.005,
                "marginal {j}: {freq} vs {pj}"
            );
        }
    }

    #[test]
    fn expected_score_close_to_kl_at_large_k() {
        let pair = reference_pair();
        let oracle = kl_divergence(&pair.p_plus, &pair.p_minus).unwrap();
        let mut r = rng(4);
        let est = mc_expected_score(&pair, 4096, 50_000, &mut r).unwrap();
        assert!(
            (est.estimate - oracle).abs() < 0.02,
            "estimate {} vs {}",
            est.estimate,
            oracle
        );
        let bound = (pair.ratio_ceil() / pair.ratio_floor()).ln();
        assert!(est.max_abs_t <= bound + 1e-12);
    }

    #[test]
    fn expected_score_bias_shrinks_with_k() {
        let pair = reference_pair();
        let oracle = kl_divergence(&pair.p_plus, &pair.p_minus).unwrap();
        // small-K bias is strong enough to see with modest draws
        let mut r8 = rng(5);
        let e8 = mc_expected_score(&pair, 8, 100_000, &mut r8).unwrap();
        let mut r512 = rng(6);
        let e512 = mc_expected_score(&pair, 512, 100_000, &mut r512).unwrap();
        assert!((e8.estimate - oracle).abs() > (e512.estimate - oracle).abs());
    }

    #[test]
    fn mixture_tilt_doubling_source() {
        let beta = 1.5;
        let q = mixture_tilt_closed_form(
            &[0.5, 0.5],
            &[
                SourceScores::point_mass(beta * 2f64.ln()),
                SourceScores::point_mass(0.0),
            ],
            beta,
        )
        .unwrap();
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((q[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mixture_mc_matches_closed_form_on_random_sources() {
        let mut r = rng(7);
        let beta = 1.5;
        let priors = random_simplex(3, &mut r);
        let sources: Vec<SourceScores> = (0..3)
            .map(|_| {
                let probs = random_simplex(4, &mut r);
                SourceScores {
                    outcomes: probs
                        .into_iter()
                        .map(|p| (r.uniform_in(-1.5, 1.5), p))
                        .collect(),
                }
            })
            .collect();
        let closed = mixture_tilt_closed_form(&priors, &sources, beta).unwrap();
        let mc =
            mc_mixture_proportions(&priors, &sources, beta, 200_000, None, &mut r).unwrap();
        for (a, b) in closed.iter().zip(&mc.q) {
            assert!((a - b).abs() < 0.01, "closed {a} vs mc {b}");
        }
    }

    #[test]
    fn clipped_ratios_stay_in_sixteenth_box() {
        let mut r = rng(8);
        let wcfg = WeightConfig::default();
        let beta = wcfg.beta;
        // extreme scores would tilt far beyond the box without clipping
        let sources = vec![
            SourceScores::point_mass(beta * 8.0),
            SourceScores::point_mass(-beta * 8.0),
        ];
        let mc = mc_mixture_proportions(
            &[0.5, 0.5],
            &sources,
            beta,
            50_000,
            Some((wcfg.w_min, wcfg.w_max)),
            &mut r,
        )
        .unwrap();
        for ratio in &mc.mass_ratio {
            assert!(*ratio >= 1.0 / 16.0 - 1e-12);
            assert!(*ratio <= 16.0 + 1e-12);
        }
    }

    #[test]
    fn entropy_lens_identity_small_supports() {
        let mut r = rng(9);
        for n in 2..=64 {
            let p = random_simplex(n, &mut r);
            let lhs = kl_to_uniform(&p);
            let rhs = (n as f64).ln() - entropy(&p);
            assert!((lhs - rhs).abs() < 1e-12, "support {n}");
        }
    }

    #[test]
    fn verification_report_passes_with_reduced_budget() {
        let cfg = VerifyConfig {
            prop1_pairs: 20,
            prop2_draws: 20_000,
            prop2_trend_ks: vec![8, 512],
            prop2_trend_seeds: 3,
            prop2_trend_draws: 50_000,
            prop3_samples: 20_000,
            bound_batches: 500,
            ..VerifyConfig::default()
        };
        let report = run_verification(&cfg, 0).unwrap();
        for c in &report.checks {
            assert!(c.pass, "{} failed: {} (obs {})", c.name, c.detail, c.observed);
        }
        assert!(report.pass);
        // determinism of the whole report
        let again = run_verification(&cfg, 0).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn tighter_tolerance_fails_the_convergence_check() {
        let cfg = VerifyConfig {
            prop1_pairs: 5,
            prop2_tol: 0.02 / 100.0,
            prop2_draws: 200_000,
            prop2_trend_ks: vec![8],
            prop2_trend_seeds: 1,
            prop2_trend_draws: 1000,
            prop3_samples: 1000,
            bound_batches: 100,
            ..VerifyConfig::default()
        };
        let report = run_verification(&cfg, 1).unwrap();
        let conv = report
            .checks
            .iter()
            .find(|c| c.name == "expected_score_matches_kl")
            .unwrap();
        assert!(!conv.pass, "MC noise should exceed a 100x tighter tolerance");
        assert!(!report.pass);
    }
}
