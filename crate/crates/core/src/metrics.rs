//! Run artifacts: the per-interval metrics table, weight dumps, and
//! deterministic JSON summaries. No timestamps anywhere; identical runs
//! must produce byte-identical files.

use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

pub const METRICS_HEADER: &str = "step,loss_total,loss_act,loss_act_unweighted,loss_id,loss_rank,loss_tok,nce_acc,nce_margin,mean_t,valid_ratio,ema_acc,ema_margin,ema_t,ema_valid,tau,beta,hard_ratio,w_q10,w_q50,w_q90,lr";

/// One logging-interval snapshot of the training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_act: f64,
    pub loss_act_unweighted: f64,
    pub loss_id: f64,
    pub loss_rank: f64,
    pub loss_tok: f64,
    pub nce_acc: f64,
    pub nce_margin: f64,
    pub mean_t: f64,
    pub valid_ratio: f64,
    pub ema_acc: f64,
    pub ema_margin: f64,
    pub ema_t: f64,
    pub ema_valid: f64,
    pub tau: f64,
    pub beta: f64,
    pub hard_ratio: f64,
    pub w_q10: f64,
    pub w_q50: f64,
    pub w_q90: f64,
    pub lr: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.loss_total,
            self.loss_act,
            self.loss_act_unweighted,
            self.loss_id,
            self.loss_rank,
            self.loss_tok,
            self.nce_acc,
            self.nce_margin,
            self.mean_t,
            self.valid_ratio,
            self.ema_acc,
            self.ema_margin,
            self.ema_t,
            self.ema_valid,
            self.tau,
            self.beta,
            self.hard_ratio,
            self.w_q10,
            self.w_q50,
            self.w_q90,
            self.lr
        );
        s
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Linear-interpolation quantile over an unsorted sample. Empty input
/// maps to 0 so weight quantiles stay loggable before any valid batch.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite quantile input"));
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[lo]
    }
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// FNV-1a over raw bytes; stable across platforms, used to fingerprint
/// resolved configurations in checkpoints and reports.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}
