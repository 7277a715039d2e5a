//! Feedback controller for the identification task. Tracks EMAs of the
//! batch statistics and nudges the contrastive temperature, the advantage
//! scale, and the hard-negative ratio so the task stays neither trivial
//! nor impossible. All updates are plain f64 arithmetic in a fixed order,
//! so a recorded stat trace replays to bit-identical trajectories.

use crate::error::{PtrError, Result};
use crate::scorer::BatchStats;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub ema_decay: f64,
    /// Below this EMA accuracy the task is too hard: soften (raise tau, beta).
    pub low_acc: f64,
    /// Above this EMA accuracy, with margin, sharpen (lower tau, beta).
    pub high_acc: f64,
    pub margin_gate: f64,
    pub up_mult: f64,
    pub down_mult: f64,
    /// Hard-negative ratio ramps linearly from `hard_acc_lo` over a span
    /// of `hard_acc_span` up to `hard_max`.
    pub hard_acc_lo: f64,
    pub hard_acc_span: f64,
    pub hard_max: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Training steps between controller invocations.
    pub log_interval: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            ema_decay: 0.98,
            low_acc: 0.05,
            high_acc: 0.35,
            margin_gate: 0.10,
            up_mult: 1.01,
            down_mult: 0.995,
            hard_acc_lo: 0.10,
            hard_acc_span: 0.40,
            hard_max: 0.5,
            tau_min: 0.03,
            tau_max: 0.20,
            beta_min: 0.5,
            beta_max: 3.0,
            log_interval: 50,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(PtrError::InvalidConfig(
                "controller ema_decay must lie in [0, 1)".into(),
            ));
        }
        if self.tau_min <= 0.0 || self.tau_min > self.tau_max {
            return Err(PtrError::InvalidConfig(
                "controller tau bounds must satisfy 0 < tau_min <= tau_max".into(),
            ));
        }
        if self.beta_min <= 0.0 || self.beta_min > self.beta_max {
            return Err(PtrError::InvalidConfig(
                "controller beta bounds must satisfy 0 < beta_min <= beta_max".into(),
            ));
        }
        if self.up_mult < 1.0 || self.down_mult > 1.0 || self.down_mult <= 0.0 {
            return Err(PtrError::InvalidConfig(
                "controller multipliers must satisfy up >= 1 >= down > 0".into(),
            ));
        }
        if self.hard_acc_span <= 0.0 || !(0.0..=1.0).contains(&self.hard_max) {
            return Err(PtrError::InvalidConfig(
                "controller hard-negative ramp is malformed".into(),
            ));
        }
        if self.log_interval == 0 {
            return Err(PtrError::InvalidConfig(
                "controller log_interval must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub tau: f64,
    pub beta: f64,
    pub hard_ratio: f64,
    pub ema_acc: f64,
    pub ema_margin: f64,
    pub ema_t: f64,
    pub ema_valid: f64,
}

impl ControllerState {
    pub fn new(tau_init: f64, beta_init: f64) -> Self {
        Self {
            tau: tau_init,
            beta: beta_init,
            hard_ratio: 0.0,
            ema_acc: 0.0,
            ema_margin: 0.0,
            ema_t: 0.0,
            ema_valid: 0.0,
        }
    }

    /// EMA update, written exactly as decay*old + (1-decay)*new so replays
    /// are bit-identical.
    pub fn update_stats(&mut self, stats: &BatchStats, cfg: &ControllerConfig) {
        let d = cfg.ema_decay;
        let w = 1.0 - cfg.ema_decay;
        self.ema_acc = d * self.ema_acc + w * stats.accuracy;
        self.ema_margin = d * self.ema_margin + w * stats.mean_margin;
        self.ema_t = d * self.ema_t + w * stats.mean_t;
        self.ema_valid = d * self.ema_valid + w * stats.valid_ratio;
    }

    /// One controller decision: conditional multiplicative nudges, then
    /// clamping, then the hard-negative ramp.
    pub fn adapt(&mut self, cfg: &ControllerConfig) {
        if self.ema_acc < cfg.low_acc {
            self.tau *= cfg.up_mult;
            self.beta *= cfg.up_mult;
        } else if self.ema_acc > cfg.high_acc && self.ema_margin > cfg.margin_gate {
            self.tau *= cfg.down_mult;
            self.beta *= cfg.down_mult;
        }
        self.tau = self.tau.clamp(cfg.tau_min, cfg.tau_max);
        self.beta = self.beta.clamp(cfg.beta_min, cfg.beta_max);
        let ramp = ((self.ema_acc - cfg.hard_acc_lo) / cfg.hard_acc_span).clamp(0.0, 1.0);
        self.hard_ratio = cfg.hard_max * ramp;
    }
}
