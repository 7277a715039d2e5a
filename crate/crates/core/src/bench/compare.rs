//! Paired comparisons: reweighted training against the uniform baseline
//! on identical data, initialization, and evaluation draws. Only the
//! weight path differs, so per-seed deltas isolate the reweighting
//! effect.

use crate::bench::corrupt::apply_corruption;
use crate::bench::eval::{evaluate_policy, EvalReport};
use crate::bench::train::Trainer;
use crate::bench::world::{generate_world, Quality};
use crate::config::RunConfig;
use crate::error::{PtrError, Result};
use crate::metrics::median;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub ptr: EvalReport,
    pub sft: EvalReport,
    /// ptr.success_rate - sft.success_rate.
    pub delta_success: f64,
    pub median_weight_clean: f64,
    pub median_weight_corrupted: Option<f64>,
    /// (loss_sft - loss_ptr) / loss_sft on the unweighted action loss,
    /// one point per logged step.
    pub loss_reduction: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub corruption_mode: String,
    pub seeds: Vec<SeedOutcome>,
    pub mean_delta_success: f64,
    /// Seeds where the reweighted lane is at least as good.
    pub wins: usize,
    /// Seeds where the corrupted median weight sits strictly below clean.
    pub weight_separations: usize,
    /// Seeds that actually contained corrupted-labeled records.
    pub seeds_with_corruption: usize,
}

/// Trains both lanes for one seed and evaluates them on the clean world.
pub fn run_pair(base: &RunConfig, seed: u64) -> Result<SeedOutcome> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.validate()?;
    let ds = generate_world(&cfg.world, seed)?;
    let ds = apply_corruption(&ds, &cfg.corruption, &cfg.world, seed)?;

    let mut ptr_cfg = cfg.clone();
    ptr_cfg.train.force_uniform = false;
    let mut sft_cfg = cfg.clone();
    sft_cfg.train.force_uniform = true;

    let mut ptr = Trainer::new(&ptr_cfg)?;
    ptr.train(&ds, None)?;
    let mut sft = Trainer::new(&sft_cfg)?;
    sft.train(&ds, None)?;

    let ptr_eval = evaluate_policy(&ptr.policy, &cfg.world, &cfg.eval, seed)?;
    let sft_eval = evaluate_policy(&sft.policy, &cfg.world, &cfg.eval, seed)?;

    let weights = ptr.weight_report(&ds)?;
    let clean: Vec<f64> = weights
        .iter()
        .filter(|w| w.quality == Quality::Clean)
        .map(|w| w.mixed)
        .collect();
    let corrupted: Vec<f64> = weights
        .iter()
        .filter(|w| w.quality == Quality::Corrupted)
        .map(|w| w.mixed)
        .collect();

    let loss_reduction = ptr
        .rows
        .iter()
        .zip(&sft.rows)
        .map(|(p, s)| {
            let rel = if s.loss_act_unweighted != 0.0 {
                (s.loss_act_unweighted - p.loss_act_unweighted) / s.loss_act_unweighted
            } else {
                0.0
            };
            [p.step as f64, rel]
        })
        .collect();

    Ok(SeedOutcome {
        seed,
        delta_success: ptr_eval.success_rate - sft_eval.success_rate,
        ptr: ptr_eval,
        sft: sft_eval,
        median_weight_clean: median(&clean),
        median_weight_corrupted: if corrupted.is_empty() {
            None
        } else {
            Some(median(&corrupted))
        },
        loss_reduction,
    })
}

pub fn compare_runs(base: &RunConfig, seeds: &[u64]) -> Result<CompareReport> {
    if seeds.len() < 2 {
        return Err(PtrError::InvalidArgument(
            "paired comparison needs at least 2 seeds".into(),
        ));
    }
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        outcomes.push(run_pair(base, seed)?);
    }
    let mean_delta_success =
        outcomes.iter().map(|o| o.delta_success).sum::<f64>() / outcomes.len() as f64;
    let wins = outcomes.iter().filter(|o| o.delta_success >= 0.0).count();
    let weight_separations = outcomes
        .iter()
        .filter(|o| {
            o.median_weight_corrupted
                .map(|c| c < o.median_weight_clean)
                .unwrap_or(false)
        })
        .count();
    let seeds_with_corruption = outcomes
        .iter()
        .filter(|o| o.median_weight_corrupted.is_some())
        .count();
    Ok(CompareReport {
        corruption_mode: format!("{:?}", base.corruption.mode).to_lowercase(),
        seeds: outcomes,
        mean_delta_success,
        wins,
        weight_separations,
        seeds_with_corruption,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corrupt::CorruptionMode;

    fn quick_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.world.trajs_per_pair = 2;
        cfg.world.n_tasks = 2;
        cfg.world.episode_steps = 24;
        cfg.world.chunk_len = 8;
        cfg.world.chunk_stride = 8;
        cfg.world.deltas = vec![8, 12];
        cfg.model.enc_hidden = 6;
        cfg.model.d_y = 5;
        cfg.model.trunk_hidden = 6;
        cfg.model.h_dim = 4;
        cfg.model.instr_dim = 3;
        cfg.model.state_emb = 3;
        cfg.model.flow_hidden = 6;
        cfg.model.query_hidden = 5;
        cfg.tokenizer.n_tokens = 2;
        cfg.tokenizer.token_dim = 4;
        cfg.pool.queue_capacity = 32;
        cfg.pool.max_queue_draws = 8;
        cfg.train.steps = 8;
        cfg.train.segments_per_batch = 3;
        cfg.train.nce_warmup = 2;
        cfg.train.lr_warmup = 2;
        cfg.controller.log_interval = 4;
        cfg.eval.episodes = 4;
        cfg.corruption.mode = CorruptionMode::Combined;
        cfg
    }

    #[test]
    fn paired_runs_share_data_and_eval_draws() {
        let cfg = quick_cfg();
        let a = run_pair(&cfg, 3).unwrap();
        let b = run_pair(&cfg, 3).unwrap();
        assert_eq!(a.ptr, b.ptr);
        assert_eq!(a.sft, b.sft);
        assert_eq!(a.median_weight_clean, b.median_weight_clean);
    }

    #[test]
    fn report_aggregates_are_consistent() {
        let cfg = quick_cfg();
        let report = compare_runs(&cfg, &[1, 2]).unwrap();
        assert_eq!(report.seeds.len(), 2);
        assert!(report.wins <= 2);
        assert!(report.weight_separations <= report.seeds_with_corruption);
        let json = serde_json::to_string(&report).unwrap();
        let back: CompareReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.seeds.len(), 2);
    }

    #[test]
    fn one_seed_is_rejected() {
        let cfg = quick_cfg();
        assert!(compare_runs(&cfg, &[1]).is_err());
    }
}
