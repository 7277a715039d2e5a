//! The segment training loop.
//!
//! Per step: draw a batch of segments (whole trajectories), thread the
//! belief state through each segment's chunks, encode post-action targets
//! with the EMA teacher, assemble candidate sets, score, weight, and take
//! one decoupled-weight-decay Adam step on
//!
//!   L_total = L*_act + lambda_id * L_id + lambda_rank * L_rank + L_tok
//!
//! where L*_act is the self-normalized weighted flow-matching loss. The
//! weights are stop-gradded: no gradient flows from the action loss into
//! the scorer. Belief states are stop-gradded across chunks; only the
//! learned initial tokens receive a belief-path gradient.
//!
//! All randomness is drawn from per-step streams, so a run can be
//! replayed from any checkpoint bit-exactly.

use crate::bench::policy::{ChunkForward, PolicyBundle};
use crate::bench::world::{Dataset, Quality};
use crate::config::RunConfig;
use crate::controller::{ControllerConfig, ControllerState};
use crate::error::{PtrError, Result};
use crate::metrics::{quantile, MetricsRow};
use crate::numerics::rng::phase;
use crate::numerics::{Mlp, MlpCache, SeededRng, Snapshot, SnapshotWriter};
use crate::pool::{
    build_candidate_set, encode_target, gather_ranks, offset_discount, shard_ranks,
    CandidateSet, FifoQueue, TargetEmbedding,
};
use crate::reweight::{discount_weight, normalize, weight, WeightBundle, WeightConfig};
use crate::scorer::{
    batch_stats, id_loss_grad_logits, logits, logits_backward, query_forward, rank_pair_loss,
    rank_permutation, score_candidates, BatchStats, LogitsOut, ScoreEval, ScorerConfig,
};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Trajectories per batch; each contributes all its surviving chunks.
    pub segments_per_batch: usize,
    pub lr: f64,
    /// Linear learning-rate warmup steps (cosine decay after).
    pub lr_warmup: usize,
    /// Steps during which every sample weight is forced to 1 while the
    /// scorer losses keep training.
    pub nce_warmup: usize,
    pub lambda_id: f64,
    pub lambda_rank: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// EMA decay of the target teacher.
    pub ema_mu: f64,
    /// Beta distribution over the bridge time sigma.
    pub sigma_a: f64,
    pub sigma_b: f64,
    /// Uniform-SFT lane: unit weights at every step.
    pub force_uniform: bool,
    /// Checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            segments_per_batch: 64,
            lr: 1e-4,
            lr_warmup: 200,
            nce_warmup: 500,
            lambda_id: 0.05,
            lambda_rank: 0.25,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ema_mu: 0.999,
            sigma_a: 1.5,
            sigma_b: 1.0,
            force_uniform: false,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.segments_per_batch == 0 {
            return Err(PtrError::InvalidConfig(
                "steps and segments_per_batch must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(PtrError::InvalidConfig("lr must be positive".into()));
        }
        for (name, v) in [
            ("lambda_id", self.lambda_id),
            ("lambda_rank", self.lambda_rank),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PtrError::InvalidConfig(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0)
            || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0)
            || !(self.adam_eps > 0.0)
        {
            return Err(PtrError::InvalidConfig("bad adam moments".into()));
        }
        if !(self.ema_mu > 0.0 && self.ema_mu < 1.0) {
            return Err(PtrError::InvalidConfig(
                "ema_mu must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(self.sigma_a > 0.0 && self.sigma_b > 0.0) {
            return Err(PtrError::InvalidConfig(
                "sigma beta-distribution shapes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// How the action-loss weights are obtained during a pass.
pub enum WeightMode<'a> {
    /// Compute from the live scores (normal training).
    Live,
    /// Use a fixed normalized-weight vector (gradient checks: the weights
    /// are stop-gradded, so probes must hold them constant).
    Frozen(&'a [f64]),
}

/// How belief states are threaded during a pass.
pub enum ZMode<'a> {
    /// Thread z through each segment, recording the used values.
    Live,
    /// Replay a recorded tape for chunks after the first (gradient
    /// checks: z is stop-gradded between chunks, so probes must hold the
    /// carried values constant while the learned initial tokens stay live).
    Frozen(&'a [Vec<f64>]),
}

/// Per-sample weight diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct WeightSample {
    pub uid: u64,
    pub quality: Quality,
    pub t_score: Option<f64>,
    pub mixed: f64,
    pub normalized: f64,
}

pub fn write_weights_csv(path: &Path, samples: &[WeightSample]) -> Result<()> {
    let mut out = String::from("uid,quality,t_score,mixed,normalized\n");
    for s in samples {
        let q = match s.quality {
            Quality::Clean => "clean",
            Quality::Corrupted => "corrupted",
        };
        let t = s.t_score.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", s.uid, q, t, s.mixed, s.normalized);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Everything one batch pass produces.
pub struct BatchPass {
    pub loss_total: f64,
    pub loss_act: f64,
    pub loss_act_unweighted: f64,
    pub loss_id: f64,
    pub loss_rank: f64,
    pub loss_tok: f64,
    pub stats: BatchStats,
    pub weights: Vec<WeightSample>,
    pub z_tape: Vec<Vec<f64>>,
    pub n_records: usize,
    pub n_valid: usize,
}

struct Slot<'a> {
    record: &'a crate::bench::world::SampleRecord,
    seg_pos: usize,
    sigma: f64,
    eps: Vec<f64>,
}

struct Scored {
    eval: ScoreEval,
    set: CandidateSet,
    u_cache: MlpCache,
}

struct RankPair {
    slot: usize,
    partner: usize,
    ddelta: f64,
    lo: LogitsOut,
    single: CandidateSet,
    u_cache: MlpCache,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub policy: PolicyBundle,
    pub teacher: Mlp,
    pub queue: FifoQueue,
    pub controller: ControllerState,
    pub step: usize,
    pub rows: Vec<MetricsRow>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_t: u64,
    config_hash: u64,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let policy = PolicyBundle::new(
            cfg.model.clone(),
            cfg.tokenizer.clone(),
            cfg.world.chunk_len,
            cfg.world.n_tasks,
            cfg.seed,
        )?;
        let teacher = policy.obs_encoder.clone();
        let n = policy.param_count();
        Ok(Self {
            policy,
            teacher,
            queue: FifoQueue::new(cfg.pool.queue_capacity),
            controller: ControllerState::new(cfg.scorer.tau, cfg.weights.beta),
            step: 0,
            rows: Vec::new(),
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            adam_t: 0,
            config_hash: cfg.config_hash(),
            cfg: cfg.clone(),
        })
    }

    fn ctrl_cfg(&self) -> &ControllerConfig {
        &self.cfg.controller
    }

    /// Learning rate at a step: linear warmup into cosine decay.
    pub fn lr_at(&self, step: usize) -> f64 {
        let t = &self.cfg.train;
        let warm = if t.lr_warmup > 0 {
            ((step + 1) as f64 / t.lr_warmup as f64).min(1.0)
        } else {
            1.0
        };
        let progress = step as f64 / t.steps.max(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        t.lr * warm * cosine
    }

    fn select_batch<'a>(&self, ds: &'a Dataset, step: usize) -> Result<Vec<Slot<'a>>> {
        let t = &self.cfg.train;
        let n_traj = ds.n_trajectories();
        if n_traj == 0 {
            return Err(PtrError::EmptyInput("dataset has no trajectories"));
        }
        let take = t.segments_per_batch.min(n_traj);
        let base = (step as u64) * 8;
        let mut batch_rng = SeededRng::stream(self.cfg.seed, phase::TRAIN_STEP, base);
        let traj_ids = batch_rng.sample_without_replacement(n_traj, take);
        let mut flow_rng = SeededRng::stream(self.cfg.seed, phase::TRAIN_STEP, base + 1);
        let flat = self.policy.flat_action_len();
        let mut slots = Vec::new();
        for traj_id in traj_ids {
            for (seg_pos, rec_idx) in ds.records_of(traj_id).into_iter().enumerate() {
                let sigma = flow_rng.beta(t.sigma_a, t.sigma_b);
                let eps: Vec<f64> = (0..flat).map(|_| flow_rng.normal()).collect();
                slots.push(Slot {
                    record: &ds.records[rec_idx],
                    seg_pos,
                    sigma,
                    eps,
                });
            }
        }
        if slots.is_empty() {
            return Err(PtrError::EmptyInput("selected batch has no records"));
        }
        Ok(slots)
    }

    /// One full forward (and optionally backward) pass over a batch.
    ///
    /// `push_queue` feeds this batch's targets into the FIFO negative
    /// queue afterward; probes set it false to leave state untouched.
    pub fn batch_pass(
        &mut self,
        ds: &Dataset,
        step: usize,
        weight_mode: WeightMode,
        z_mode: ZMode,
        accumulate_grads: bool,
        push_queue: bool,
    ) -> Result<BatchPass> {
        let slots = self.select_batch(ds, step)?;
        let n_records = slots.len();
        let t = self.cfg.train.clone();
        let eff_scorer = ScorerConfig {
            tau: self.controller.tau,
            ..self.cfg.scorer.clone()
        };
        let eff_weights = WeightConfig {
            beta: self.controller.beta,
            ..self.cfg.weights.clone()
        };

        // per-segment belief threading
        let mut cfs: Vec<ChunkForward> = Vec::with_capacity(n_records);
        let mut z_tape: Vec<Vec<f64>> = Vec::with_capacity(n_records);
        let mut z_cur: Vec<f64> = Vec::new();
        for (i, slot) in slots.iter().enumerate() {
            let z_used: Vec<f64> = if slot.seg_pos == 0 {
                self.policy.tokenizer.z_init().to_vec()
            } else {
                match &z_mode {
                    ZMode::Live => z_cur.clone(),
                    ZMode::Frozen(tape) => tape
                        .get(i)
                        .ok_or_else(|| {
                            PtrError::ShapeMismatch("z tape shorter than batch".into())
                        })?
                        .clone(),
                }
            };
            let cf = self
                .policy
                .forward_chunk(slot.record, &z_used, slot.sigma, &slot.eps)?;
            z_cur = cf.tok_step.z_next.clone();
            z_tape.push(z_used);
            cfs.push(cf);
        }

        // teacher targets
        let mut targets: Vec<Option<TargetEmbedding>> = Vec::with_capacity(n_records);
        let mut pool_list: Vec<TargetEmbedding> = Vec::new();
        for slot in &slots {
            let te = match &slot.record.future_obs {
                Some(future) => encode_target(future, &self.teacher, self.cfg.pool.l2_eps)?
                    .map(|embedding| TargetEmbedding {
                        sample_uid: slot.record.uid,
                        task_id: slot.record.task_id,
                        state: slot.record.state.clone(),
                        embedding,
                    }),
                None => None,
            };
            if let Some(te) = &te {
                pool_list.push(te.clone());
            }
            targets.push(te);
        }
        let gathered = gather_ranks(&shard_ranks(&pool_list, self.cfg.pool.n_virtual_ranks));

        // candidate sets and scoring
        let base = (step as u64) * 8;
        let mut pool_rng = SeededRng::stream(self.cfg.seed, phase::TRAIN_STEP, base + 2);
        let mut scored: Vec<Option<Scored>> = Vec::with_capacity(n_records);
        for (i, target) in targets.iter().enumerate() {
            let out = match target {
                Some(te) => {
                    match build_candidate_set(
                        te,
                        &gathered,
                        &self.queue,
                        &self.cfg.pool,
                        self.controller.hard_ratio,
                        &mut pool_rng,
                    ) {
                        Ok((set, _info)) => {
                            let (u, u_cache) =
                                query_forward(&self.policy.query, &cfs[i].h, &cfs[i].e)?;
                            let eval = score_candidates(&u, &set, &eff_scorer)?;
                            Some(Scored { eval, set, u_cache })
                        }
                        // a sample with no negatives falls back to weight 1
                        Err(PtrError::EmptyNegativePool) => None,
                        Err(e) => return Err(e),
                    }
                }
                None => None,
            };
            scored.push(out);
        }
        if push_queue {
            for te in pool_list {
                self.queue.push(te);
            }
        }

        let evals: Vec<Option<ScoreEval>> =
            scored.iter().map(|s| s.as_ref().map(|s| s.eval.clone())).collect();
        let stats = batch_stats(&evals);
        let n_valid = scored.iter().filter(|s| s.is_some()).count();

        // discounts and weights
        let warmup_uniform = t.force_uniform || step < t.nce_warmup;
        let mut discounts = Vec::with_capacity(n_records);
        let mut bundles: Vec<WeightBundle> = Vec::with_capacity(n_records);
        for (slot, s) in slots.iter().zip(&scored) {
            let disc = offset_discount(
                self.cfg.pool.gamma,
                slot.record.delta as u32,
                ds.delta_max as u32,
            );
            let mut bundle = match s {
                Some(sc) if !warmup_uniform => weight(sc.eval.t_score, &eff_weights)?,
                _ => WeightBundle::unit(),
            };
            if self.cfg.pool.discount_weights {
                bundle.mixed = discount_weight(bundle.mixed, disc);
            }
            discounts.push(disc);
            bundles.push(bundle);
        }
        let mixed: Vec<f64> = bundles.iter().map(|b| b.mixed).collect();
        let live_normalized = normalize(&mixed)?;
        let normalized: Vec<f64> = match weight_mode {
            WeightMode::Live => live_normalized.clone(),
            WeightMode::Frozen(w) => {
                if w.len() != n_records {
                    return Err(PtrError::ShapeMismatch(
                        "frozen weight vector length".into(),
                    ));
                }
                w.to_vec()
            }
        };

        // losses
        let loss_act: f64 = normalized
            .iter()
            .zip(&cfs)
            .map(|(w, cf)| w * cf.flow_loss)
            .sum();
        let loss_act_unweighted: f64 =
            cfs.iter().map(|cf| cf.flow_loss).sum::<f64>() / n_records as f64;
        let loss_id: f64 = if n_valid > 0 {
            slots
                .iter()
                .zip(&scored)
                .zip(&discounts)
                .filter_map(|((_, s), d)| s.as_ref().map(|sc| d * sc.eval.id_loss))
                .sum::<f64>()
                / n_valid as f64
        } else {
            0.0
        };

        // ranking pairs over the valid samples
        let valid_idx: Vec<usize> = (0..n_records).filter(|&i| scored[i].is_some()).collect();
        let mut perm_rng = SeededRng::stream(self.cfg.seed, phase::TRAIN_STEP, base + 3);
        let mut pairs: Vec<RankPair> = Vec::new();
        let mut loss_rank = 0.0;
        if let Some(perm) = rank_permutation(valid_idx.len(), &mut perm_rng) {
            let n_pairs = valid_idx.len() as f64;
            for (pos, &i) in valid_idx.iter().enumerate() {
                let j = valid_idx[perm[pos]];
                let sc = scored[i].as_ref().expect("valid slot");
                let d_plus = sc.eval.logits_out.logits[0];
                let (u2, u_cache) =
                    query_forward(&self.policy.query, &cfs[i].h, &cfs[j].e)?;
                let single = CandidateSet {
                    matched_uid: sc.set.matched_uid,
                    embeddings: vec![sc.set.embeddings[0].clone()],
                };
                let lo = logits(&u2, &single, eff_scorer.tau, eff_scorer.logit_clamp)?;
                let d_minus = lo.logits[0];
                let (loss, ddelta) = rank_pair_loss(d_plus, d_minus);
                loss_rank += loss / n_pairs;
                pairs.push(RankPair {
                    slot: i,
                    partner: j,
                    ddelta: ddelta / n_pairs,
                    lo,
                    single,
                    u_cache,
                });
            }
        }

        let loss_tok: f64 =
            cfs.iter().map(|cf| cf.tok_step.l_tok).sum::<f64>() / n_records as f64;
        let loss_total = loss_act + t.lambda_id * loss_id + t.lambda_rank * loss_rank + loss_tok;
        if !loss_total.is_finite() {
            return Err(PtrError::NonFiniteLoss {
                step: step as u64,
                detail: format!(
                    "act {loss_act} id {loss_id} rank {loss_rank} tok {loss_tok}"
                ),
            });
        }

        if accumulate_grads {
            self.policy.zero_grads();
            let d = self.policy.cfg.h_dim;
            let token_dim = self.policy.tokenizer.config().token_dim;
            let mut dh_extra = vec![vec![0.0; d]; n_records];
            let mut de_extra = vec![vec![0.0; token_dim]; n_records];

            // rank coefficients per slot (d+ enters the main logits)
            let mut rank_on_matched = vec![0.0; n_records];
            for pair in &pairs {
                rank_on_matched[pair.slot] += t.lambda_rank * pair.ddelta;
            }

            for (i, s) in scored.iter().enumerate() {
                let Some(sc) = s else { continue };
                let id_coeff = if n_valid > 0 {
                    t.lambda_id * discounts[i] / n_valid as f64
                } else {
                    0.0
                };
                let mut dlogits = id_loss_grad_logits(&sc.eval, id_coeff);
                dlogits[0] += rank_on_matched[i];
                if dlogits.iter().any(|&g| g != 0.0) {
                    let du =
                        logits_backward(&sc.eval.logits_out, &sc.set, &dlogits, eff_scorer.tau)?;
                    let dq = self.policy.query.backward(&sc.u_cache, &du)?;
                    for (acc, g) in dh_extra[i].iter_mut().zip(&dq[..d]) {
                        *acc += g;
                    }
                    for (acc, g) in de_extra[i].iter_mut().zip(&dq[d..]) {
                        *acc += g;
                    }
                }
            }
            for pair in &pairs {
                let dlo = vec![-t.lambda_rank * pair.ddelta];
                let du = logits_backward(&pair.lo, &pair.single, &dlo, eff_scorer.tau)?;
                let dq = self.policy.query.backward(&pair.u_cache, &du)?;
                for (acc, g) in dh_extra[pair.slot].iter_mut().zip(&dq[..d]) {
                    *acc += g;
                }
                for (acc, g) in de_extra[pair.partner].iter_mut().zip(&dq[d..]) {
                    *acc += g;
                }
            }

            let ent_c = self.policy.tokenizer.config().lambda_ent / n_records as f64;
            let div_c = self.policy.tokenizer.config().lambda_div / n_records as f64;
            for (i, slot) in slots.iter().enumerate() {
                self.policy.backward_chunk(
                    slot.record,
                    &cfs[i],
                    slot.seg_pos == 0,
                    normalized[i],
                    &dh_extra[i],
                    &de_extra[i],
                    ent_c,
                    div_c,
                )?;
            }
        }

        let weights = slots
            .iter()
            .zip(&scored)
            .zip(mixed.iter().zip(&live_normalized))
            .map(|((slot, s), (m, nw))| WeightSample {
                uid: slot.record.uid,
                quality: slot.record.quality,
                t_score: s.as_ref().map(|sc| sc.eval.t_score),
                mixed: *m,
                normalized: *nw,
            })
            .collect();

        Ok(BatchPass {
            loss_total,
            loss_act,
            loss_act_unweighted,
            loss_id,
            loss_rank,
            loss_tok,
            stats,
            weights,
            z_tape,
            n_records,
            n_valid,
        })
    }

    fn adam_step(&mut self, lr: f64) -> Result<()> {
        let t = &self.cfg.train;
        self.adam_t += 1;
        let grads = self.policy.grads();
        let mut params = self.policy.params();
        let b1 = t.adam_beta1;
        let b2 = t.adam_beta2;
        let bc1 = 1.0 - b1.powi(self.adam_t as i32);
        let bc2 = 1.0 - b2.powi(self.adam_t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.adam_m[i] = b1 * self.adam_m[i] + (1.0 - b1) * g;
            self.adam_v[i] = b2 * self.adam_v[i] + (1.0 - b2) * g * g;
            let m_hat = self.adam_m[i] / bc1;
            let v_hat = self.adam_v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + t.adam_eps) + t.weight_decay * params[i]);
        }
        self.policy.load_params(&params)
    }

    /// One optimizer step; returns the pass for inspection.
    pub fn step_once(&mut self, ds: &Dataset) -> Result<BatchPass> {
        let step = self.step;
        let bp = match self.batch_pass(ds, step, WeightMode::Live, ZMode::Live, true, true) {
            // numerical blowups inside the pass abort with step context
            Err(PtrError::NonFinite(what)) => {
                return Err(PtrError::NonFiniteLoss {
                    step: step as u64,
                    detail: format!("non-finite {what} in the batch pass"),
                })
            }
            other => other?,
        };
        let lr = self.lr_at(step);
        self.adam_step(lr)?;
        self.teacher
            .ema_blend_from(&self.policy.obs_encoder, self.cfg.train.ema_mu)?;
        let interval = self.ctrl_cfg().log_interval.max(1) as usize;
        if (step + 1) % interval == 0 {
            self.controller.update_stats(&bp.stats, &self.cfg.controller);
            self.controller.adapt(&self.cfg.controller);
            let mix: Vec<f64> = bp.weights.iter().map(|w| w.mixed).collect();
            self.rows.push(MetricsRow {
                step: step + 1,
                loss_total: bp.loss_total,
                loss_act: bp.loss_act,
                loss_act_unweighted: bp.loss_act_unweighted,
                loss_id: bp.loss_id,
                loss_rank: bp.loss_rank,
                loss_tok: bp.loss_tok,
                nce_acc: bp.stats.accuracy,
                nce_margin: bp.stats.mean_margin,
                mean_t: bp.stats.mean_t,
                valid_ratio: bp.stats.valid_ratio,
                ema_acc: self.controller.ema_acc,
                ema_margin: self.controller.ema_margin,
                ema_t: self.controller.ema_t,
                ema_valid: self.controller.ema_valid,
                tau: self.controller.tau,
                beta: self.controller.beta,
                hard_ratio: self.controller.hard_ratio,
                w_q10: quantile(&mix, 0.10),
                w_q50: quantile(&mix, 0.50),
                w_q90: quantile(&mix, 0.90),
                lr,
            });
        }
        self.step += 1;
        Ok(bp)
    }

    /// Runs to `steps`, optionally writing periodic checkpoints.
    pub fn train(&mut self, ds: &Dataset, checkpoint_dir: Option<&Path>) -> Result<()> {
        let steps = self.cfg.train.steps;
        let interval = self.cfg.train.checkpoint_interval;
        while self.step < steps {
            self.step_once(ds)?;
            if interval > 0 && self.step % interval == 0 && self.step < steps {
                if let Some(dir) = checkpoint_dir {
                    self.save_checkpoint(dir, "checkpoint")?;
                }
            }
        }
        Ok(())
    }

    /// Post-training weight sweep over the whole dataset in sequential
    /// segment batches: forward + score only, frozen queue, current
    /// controller scales. Warmup forcing does not apply here.
    pub fn weight_report(&self, ds: &Dataset) -> Result<Vec<WeightSample>> {
        let eff_scorer = ScorerConfig {
            tau: self.controller.tau,
            ..self.cfg.scorer.clone()
        };
        let eff_weights = WeightConfig {
            beta: self.controller.beta,
            ..self.cfg.weights.clone()
        };
        let flat = self.policy.flat_action_len();
        let eps = vec![0.0; flat];
        let mut out = Vec::with_capacity(ds.records.len());
        let seg_batch = self.cfg.train.segments_per_batch.max(1);
        let traj_ids: Vec<usize> = (0..ds.n_trajectories()).collect();
        for (batch_idx, group) in traj_ids.chunks(seg_batch).enumerate() {
            let mut rng =
                SeededRng::stream(self.cfg.seed, phase::EVAL, 800_000 + batch_idx as u64);
            let mut recs: Vec<(usize, usize)> = Vec::new();
            for &traj in group {
                for (seg_pos, rec_idx) in ds.records_of(traj).into_iter().enumerate() {
                    recs.push((seg_pos, rec_idx));
                }
            }
            if recs.is_empty() {
                continue;
            }
            let mut cfs = Vec::with_capacity(recs.len());
            let mut z_cur: Vec<f64> = Vec::new();
            for &(seg_pos, rec_idx) in &recs {
                let record = &ds.records[rec_idx];
                let z_used = if seg_pos == 0 {
                    self.policy.tokenizer.z_init().to_vec()
                } else {
                    z_cur.clone()
                };
                let cf = self.policy.forward_chunk(record, &z_used, 0.5, &eps)?;
                z_cur = cf.tok_step.z_next.clone();
                cfs.push(cf);
            }
            let mut pool_list = Vec::new();
            let mut targets = Vec::with_capacity(recs.len());
            for &(_, rec_idx) in &recs {
                let record = &ds.records[rec_idx];
                let te = match &record.future_obs {
                    Some(future) => encode_target(future, &self.teacher, self.cfg.pool.l2_eps)?
                        .map(|embedding| TargetEmbedding {
                            sample_uid: record.uid,
                            task_id: record.task_id,
                            state: record.state.clone(),
                            embedding,
                        }),
                    None => None,
                };
                if let Some(te) = &te {
                    pool_list.push(te.clone());
                }
                targets.push(te);
            }
            let gathered =
                gather_ranks(&shard_ranks(&pool_list, self.cfg.pool.n_virtual_ranks));
            let mut mixed = Vec::with_capacity(recs.len());
            let mut metas = Vec::with_capacity(recs.len());
            for (i, &(_, rec_idx)) in recs.iter().enumerate() {
                let record = &ds.records[rec_idx];
                let bundle_and_t = match &targets[i] {
                    Some(te) => match build_candidate_set(
                        te,
                        &gathered,
                        &self.queue,
                        &self.cfg.pool,
                        self.controller.hard_ratio,
                        &mut rng,
                    ) {
                        Ok((set, _)) => {
                            let u = self.policy.query.infer(
                                &[cfs[i].h.as_slice(), cfs[i].e.as_slice()].concat(),
                            )?;
                            let eval = score_candidates(&u, &set, &eff_scorer)?;
                            let mut b = weight(eval.t_score, &eff_weights)?;
                            if self.cfg.pool.discount_weights {
                                let disc = offset_discount(
                                    self.cfg.pool.gamma,
                                    record.delta as u32,
                                    ds.delta_max as u32,
                                );
                                b.mixed = discount_weight(b.mixed, disc);
                            }
                            (b, Some(eval.t_score))
                        }
                        Err(PtrError::EmptyNegativePool) => (WeightBundle::unit(), None),
                        Err(e) => return Err(e),
                    },
                    None => (WeightBundle::unit(), None),
                };
                mixed.push(bundle_and_t.0.mixed);
                metas.push((record.uid, record.quality, bundle_and_t.1));
            }
            let normalized = normalize(&mixed)?;
            for ((m, nw), (uid, quality, t)) in
                mixed.iter().zip(&normalized).zip(metas)
            {
                out.push(WeightSample {
                    uid,
                    quality,
                    t_score: t,
                    mixed: *m,
                    normalized: *nw,
                });
            }
        }
        Ok(out)
    }

    pub fn save_checkpoint(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut w = SnapshotWriter::new();
        let params = self.policy.params();
        w.push("params", 1, params.len(), &params)?;
        w.push("adam_m", 1, self.adam_m.len(), &self.adam_m)?;
        w.push("adam_v", 1, self.adam_v.len(), &self.adam_v)?;
        let mut teacher_params = Vec::new();
        self.teacher.append_params(&mut teacher_params);
        w.push("teacher", 1, teacher_params.len(), &teacher_params)?;
        let d_y = self.cfg.model.d_y;
        let state_dim = crate::bench::world::STATE_DIM;
        let q = self.queue.len();
        let mut q_emb = Vec::with_capacity(q * d_y);
        let mut q_meta = Vec::with_capacity(q * (2 + state_dim));
        for te in self.queue.iter() {
            q_emb.extend_from_slice(&te.embedding);
            q_meta.push(te.sample_uid as f64);
            q_meta.push(te.task_id as f64);
            q_meta.extend_from_slice(&te.state);
        }
        w.push("queue_embeddings", q, d_y, &q_emb)?;
        w.push("queue_meta", q, 2 + state_dim, &q_meta)?;
        let extra = serde_json::json!({
            "kind": "trainer_checkpoint",
            "step": self.step,
            "adam_t": self.adam_t,
            "config_hash": self.config_hash,
            "controller": {
                "tau": self.controller.tau,
                "beta": self.controller.beta,
                "hard_ratio": self.controller.hard_ratio,
                "ema_acc": self.controller.ema_acc,
                "ema_margin": self.controller.ema_margin,
                "ema_t": self.controller.ema_t,
                "ema_valid": self.controller.ema_valid,
            },
        });
        w.write(dir, stem, extra)
    }

    pub fn resume(cfg: &RunConfig, dir: &Path, stem: &str) -> Result<Self> {
        let mut tr = Self::new(cfg)?;
        let snap = Snapshot::read(dir, stem)?;
        let stored_hash = snap.extra["config_hash"]
            .as_u64()
            .ok_or_else(|| PtrError::SnapshotCorrupt("missing config_hash".into()))?;
        if stored_hash != tr.config_hash {
            return Err(PtrError::ConfigHashMismatch);
        }
        let (_, params) = snap.get("params")?;
        tr.policy.load_params(params)?;
        let (_, m) = snap.get("adam_m")?;
        let (_, v) = snap.get("adam_v")?;
        if m.len() != tr.adam_m.len() || v.len() != tr.adam_v.len() {
            return Err(PtrError::SnapshotCorrupt("optimizer state size".into()));
        }
        tr.adam_m.copy_from_slice(m);
        tr.adam_v.copy_from_slice(v);
        let (_, teacher) = snap.get("teacher")?;
        tr.teacher.load_params(teacher)?;
        let (emb_meta, emb) = snap.get("queue_embeddings")?;
        let (meta_meta, meta) = snap.get("queue_meta")?;
        if emb_meta.rows != meta_meta.rows {
            return Err(PtrError::SnapshotCorrupt("queue row mismatch".into()));
        }
        let d_y = emb_meta.cols;
        let mcols = meta_meta.cols;
        for r in 0..emb_meta.rows {
            let mrow = &meta[r * mcols..(r + 1) * mcols];
            tr.queue.push(TargetEmbedding {
                sample_uid: mrow[0] as u64,
                task_id: mrow[1] as usize,
                state: mrow[2..].to_vec(),
                embedding: emb[r * d_y..(r + 1) * d_y].to_vec(),
            });
        }
        tr.step = snap.extra["step"]
            .as_u64()
            .ok_or_else(|| PtrError::SnapshotCorrupt("missing step".into()))?
            as usize;
        tr.adam_t = snap.extra["adam_t"]
            .as_u64()
            .ok_or_else(|| PtrError::SnapshotCorrupt("missing adam_t".into()))?;
        let c = &snap.extra["controller"];
        let read = |k: &str| -> Result<f64> {
            c[k].as_f64()
                .ok_or_else(|| PtrError::SnapshotCorrupt(format!("controller field {k}")))
        };
        tr.controller.tau = read("tau")?;
        tr.controller.beta = read("beta")?;
        tr.controller.hard_ratio = read("hard_ratio")?;
        tr.controller.ema_acc = read("ema_acc")?;
        tr.controller.ema_margin = read("ema_margin")?;
        tr.controller.ema_t = read("ema_t")?;
        tr.controller.ema_valid = read("ema_valid")?;
        Ok(tr)
    }

}
