//! Identification scorer: a two-layer query head maps the pre-action
//! context and the action summary to a query vector; cosine logits against
//! a candidate set give a posterior over candidates whose matched-target
//! probability drives both the identification loss and the sample score
//! T = log(p0 * |Y|). A symmetric ranking loss contrasts the matched logit
//! computed with the true action summary against one computed with a
//! permuted summary. The score path feeds the weighting rule through a
//! stop-gradient; only the identification and ranking losses train the
//! head.

use crate::error::{PtrError, Result};
use crate::numerics::{l2_norm, softmax, Mlp, MlpCache, SeededRng};
use crate::pool::CandidateSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerConfig {
    /// Contrastive temperature on cosine logits.
    pub tau: f64,
    /// Symmetric clamp applied to each logit before the softmax.
    pub logit_clamp: f64,
    /// Floor on the matched-target probability inside log terms.
    pub p_floor: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            tau: 0.12,
            logit_clamp: 20.0,
            p_floor: 1e-30,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(PtrError::InvalidConfig(format!(
                "scorer tau must be positive, got {}",
                self.tau
            )));
        }
        if self.logit_clamp <= 0.0 {
            return Err(PtrError::InvalidConfig(
                "logit_clamp must be positive".into(),
            ));
        }
        if !(self.p_floor > 0.0 && self.p_floor < 1.0) {
            return Err(PtrError::InvalidConfig(
                "p_floor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the query-head input [context; summary].
pub fn query_input(h: &[f64], e: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(h.len() + e.len());
    x.extend_from_slice(h);
    x.extend_from_slice(e);
    x
}

/// Runs the query head on (h, e). The head must be a two-layer network
/// whose input width is |h| + |e|.
pub fn query_forward(head: &Mlp, h: &[f64], e: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
    head.forward(&query_input(h, e))
}

/// Cosine logits of a query against a candidate set, divided by the
/// temperature and clamped symmetrically. Candidates are unit vectors by
/// construction (pool invariant), so only the query is normalized here.
#[derive(Debug, Clone)]
pub struct LogitsOut {
    pub logits: Vec<f64>,
    /// Clamp mask; clamped coordinates pass no gradient.
    pub clamped: Vec<bool>,
    u_hat: Vec<f64>,
    u_norm: f64,
}

pub fn logits(u: &[f64], set: &CandidateSet, tau: f64, clamp: f64) -> Result<LogitsOut> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(PtrError::NonFinite("query vector"));
    }
    let norm = l2_norm(u);
    if norm == 0.0 {
        return Err(PtrError::ZeroNormQuery);
    }
    let u_hat: Vec<f64> = u.iter().map(|v| v / norm).collect();
    let mut out = Vec::with_capacity(set.len());
    let mut clamped = Vec::with_capacity(set.len());
    for cand in &set.embeddings {
        if cand.len() != u.len() {
            return Err(PtrError::ShapeMismatch(format!(
                "candidate dim {} vs query dim {}",
                cand.len(),
                u.len()
            )));
        }
        let mut cos = 0.0;
        for (a, b) in u_hat.iter().zip(cand) {
            cos += a * b;
        }
        let raw = cos / tau;
        let hit = raw.abs() > clamp;
        out.push(raw.clamp(-clamp, clamp));
        clamped.push(hit);
    }
    Ok(LogitsOut {
        logits: out,
        clamped,
        u_hat,
        u_norm: norm,
    })
}

/// Gradient of a scalar loss through [`logits`] back to the raw query.
/// Clamped coordinates are masked; the query normalization projects the
/// incoming gradient onto the tangent space of the unit sphere.
pub fn logits_backward(
    lo: &LogitsOut,
    set: &CandidateSet,
    dlogits: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    if dlogits.len() != lo.logits.len() {
        return Err(PtrError::ShapeMismatch(
            "logits_backward: gradient length mismatch".into(),
        ));
    }
    let d = lo.u_hat.len();
    let mut du_hat = vec![0.0; d];
    for (i, (&g, cand)) in dlogits.iter().zip(&set.embeddings).enumerate() {
        if g == 0.0 || lo.clamped[i] {
            continue;
        }
        let scale = g / tau;
        for (acc, y) in du_hat.iter_mut().zip(cand) {
            *acc += scale * y;
        }
    }
    let mut dot = 0.0;
    for (a, b) in lo.u_hat.iter().zip(&du_hat) {
        dot += a * b;
    }
    let mut du = vec![0.0; d];
    for i in 0..d {
        du[i] = (du_hat[i] - lo.u_hat[i] * dot) / lo.u_norm;
    }
    Ok(du)
}

/// Everything the trainer needs from scoring one sample.
#[derive(Debug, Clone)]
pub struct ScoreEval {
    pub logits_out: LogitsOut,
    pub posterior: Vec<f64>,
    /// Matched-target probability (index 0), floored.
    pub p0: f64,
    /// T = log(p0 * |Y|).
    pub t_score: f64,
    pub floored: bool,
    /// Matched target is the argmax of the posterior.
    pub top1: bool,
    /// p0 minus the best negative probability.
    pub margin: f64,
    /// -log p0.
    pub id_loss: f64,
}

pub fn score_candidates(u: &[f64], set: &CandidateSet, cfg: &ScorerConfig) -> Result<ScoreEval> {
    if set.len() < 2 {
        return Err(PtrError::EmptyNegativePool);
    }
    let lo = logits(u, set, cfg.tau, cfg.logit_clamp)?;
    let posterior = softmax(&lo.logits)?;
    let raw_p0 = posterior[0];
    let floored = raw_p0 < cfg.p_floor;
    let p0 = raw_p0.max(cfg.p_floor);
    let t_score = (p0 * set.len() as f64).ln();
    let best_neg = posterior[1..]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ScoreEval {
        posterior,
        p0,
        t_score,
        floored,
        top1: raw_p0 > best_neg,
        margin: raw_p0 - best_neg,
        id_loss: -p0.ln(),
        logits_out: lo,
    })
}

/// d(-log p0)/d(logits) = posterior - onehot(0), scaled by `coeff`.
/// Returns zeros when the probability floor was active (flat region).
pub fn id_loss_grad_logits(eval: &ScoreEval, coeff: f64) -> Vec<f64> {
    if eval.floored {
        return vec![0.0; eval.posterior.len()];
    }
    eval.posterior
        .iter()
        .enumerate()
        .map(|(i, &p)| coeff * (p - if i == 0 { 1.0 } else { 0.0 }))
        .collect()
}

/// Stable -log sigmoid(delta) and its derivative with respect to delta.
pub fn rank_pair_loss(d_plus: f64, d_minus: f64) -> (f64, f64) {
    let delta = d_plus - d_minus;
    // softplus(-delta)
    let loss = if delta > 0.0 {
        (-delta).exp().ln_1p()
    } else {
        -delta + delta.exp().ln_1p()
    };
    // sigma(delta) - 1 = -1 / (1 + exp(delta))
    let ddelta = if delta > 0.0 {
        let e = (-delta).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + delta.exp())
    };
    (loss, ddelta)
}

/// Cyclic shift by a uniform nonzero offset: the derangement used to pair
/// each sample with a mismatched action summary. `None` for batches too
/// small to permute (the ranking loss is skipped and flagged upstream).
pub fn rank_permutation(n: usize, rng: &mut SeededRng) -> Option<Vec<usize>> {
    if n < 2 {
        return None;
    }
    let k = 1 + rng.below(n - 1);
    Some((0..n).map(|t| (t + k) % n).collect())
}

/// Identification statistics over the valid samples of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub accuracy: f64,
    pub mean_margin: f64,
    pub mean_t: f64,
    pub valid_ratio: f64,
}

pub fn batch_stats(evals: &[Option<ScoreEval>]) -> BatchStats {
    let total = evals.len();
    let mut n_valid = 0usize;
    let mut hits = 0usize;
    let mut margin = 0.0;
    let mut t_sum = 0.0;
    for eval in evals.iter().flatten() {
        n_valid += 1;
        hits += usize::from(eval.top1);
        margin += eval.margin;
        t_sum += eval.t_score;
    }
    if n_valid == 0 {
        return BatchStats {
            valid_ratio: 0.0,
            ..BatchStats::default()
        };
    }
    BatchStats {
        accuracy: hits as f64 / n_valid as f64,
        mean_margin: margin / n_valid as f64,
        mean_t: t_sum / n_valid as f64,
        valid_ratio: n_valid as f64 / total.max(1) as f64,
    }
}
