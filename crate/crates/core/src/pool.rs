//! Candidate pool construction for the identification task.
//!
//! Matched targets come from an EMA teacher over future observations and
//! are unit-normalized value copies: nothing downstream can backpropagate
//! into them. Negatives mix three sources: the other targets of the same
//! batch (gathered across virtual ranks in rank order), uniform draws from
//! a FIFO queue of recent targets, and mined hard negatives that share the
//! task and sit nearest in state space.

use crate::error::{PtrError, Result};
use crate::numerics::{l2_degenerate, l2_normalize, Mlp, SeededRng};
use std::collections::VecDeque;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    pub queue_capacity: usize,
    /// Max queue negatives drawn per sample.
    pub max_queue_draws: usize,
    /// Deterministic shard count emulating distributed gathers.
    pub n_virtual_ranks: usize,
    /// Base of the future-offset discount; 1 disables it.
    pub gamma: f64,
    /// Whether the offset discount also shrinks sample weights toward 1.
    pub discount_weights: bool,
    /// Normalization floor for teacher embeddings.
    pub l2_eps: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            queue_capacity: 1024,
            max_queue_draws: 64,
            n_virtual_ranks: 8,
            gamma: 1.0,
            discount_weights: false,
            l2_eps: 1e-6,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_virtual_ranks == 0 {
            return Err(PtrError::InvalidConfig("n_virtual_ranks must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(PtrError::InvalidConfig(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if self.l2_eps <= 0.0 {
            return Err(PtrError::InvalidConfig("l2_eps must be positive".into()));
        }
        Ok(())
    }
}

/// A pooled target: unit embedding plus the metadata hard-negative mining
/// keys on. Plain values; the teacher that produced them is long gone by
/// the time they are consumed.
#[derive(Debug, Clone)]
pub struct TargetEmbedding {
    pub sample_uid: u64,
    pub task_id: usize,
    pub state: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// Teacher encoding of a future observation. Returns `None` when the
/// teacher output cannot be normalized (degenerate near-zero vector);
/// callers mark such samples invalid and give them unit weight.
pub fn encode_target(future_obs: &[f64], teacher: &Mlp, eps: f64) -> Result<Option<Vec<f64>>> {
    let raw = teacher.infer(future_obs)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(PtrError::NonFinite("teacher embedding"));
    }
    if l2_degenerate(&raw, eps) {
        return Ok(None);
    }
    Ok(Some(l2_normalize(&raw, eps)))
}

/// FIFO queue of recent targets. Push evicts from the front once full, so
/// the queue always holds the newest `capacity` entries in arrival order.
#[derive(Debug, Clone, Default)]
pub struct FifoQueue {
    capacity: usize,
    entries: VecDeque<TargetEmbedding>,
}

impl FifoQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn push(&mut self, entry: TargetEmbedding) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &TargetEmbedding {
        &self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TargetEmbedding> {
        self.entries.iter()
    }
}

/// Concatenates per-rank target shards in rank order. Emulates a
/// distributed all-gather with a single-process deterministic layout.
pub fn gather_ranks(shards: &[Vec<TargetEmbedding>]) -> Vec<TargetEmbedding> {
    let mut out = Vec::with_capacity(shards.iter().map(|s| s.len()).sum());
    for shard in shards {
        out.extend(shard.iter().cloned());
    }
    out
}

/// Splits a batch of targets into `n_ranks` contiguous shards.
pub fn shard_ranks(targets: &[TargetEmbedding], n_ranks: usize) -> Vec<Vec<TargetEmbedding>> {
    let n = targets.len();
    let base = n / n_ranks;
    let rem = n % n_ranks;
    let mut shards = Vec::with_capacity(n_ranks);
    let mut off = 0;
    for r in 0..n_ranks {
        let take = base + usize::from(r < rem);
        shards.push(targets[off..off + take].to_vec());
        off += take;
    }
    shards
}

/// One sample's candidates: index 0 is the matched target, the rest are
/// negatives.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub matched_uid: u64,
    pub embeddings: Vec<Vec<f64>>,
}

impl CandidateSet {
    /// |Y|: matched plus negatives.
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CandidateBuildInfo {
    pub n_rank_negatives: usize,
    pub n_queue_negatives: usize,
    pub n_hard_negatives: usize,
}

/// Assembles one sample's candidate set.
///
/// Negatives are every gathered rank target except the sample's own
/// (excluded by uid), plus up to `max_queue_draws` uniform queue draws
/// without replacement. A `hard_ratio` fraction of the queue draws
/// (rounded) is replaced by mined hard negatives: same task first, then
/// nearest recorded state, uid as the tie break.
pub fn build_candidate_set(
    matched: &TargetEmbedding,
    rank_pool: &[TargetEmbedding],
    queue: &FifoQueue,
    cfg: &PoolConfig,
    hard_ratio: f64,
    rng: &mut SeededRng,
) -> Result<(CandidateSet, CandidateBuildInfo)> {
    if !(0.0..=1.0).contains(&hard_ratio) {
        return Err(PtrError::InvalidArgument(format!(
            "hard_ratio must lie in [0, 1], got {hard_ratio}"
        )));
    }
    let mut embeddings = Vec::new();
    embeddings.push(matched.embedding.clone());

    let mut info = CandidateBuildInfo::default();
    for t in rank_pool {
        if t.sample_uid != matched.sample_uid {
            embeddings.push(t.embedding.clone());
            info.n_rank_negatives += 1;
        }
    }

    let n_queue = cfg.max_queue_draws.min(queue.len());
    let mut queue_picks: Vec<&TargetEmbedding> = Vec::with_capacity(n_queue);
    if n_queue > 0 {
        for idx in rng.sample_without_replacement(queue.len(), n_queue) {
            let entry = queue.get(idx);
            if entry.sample_uid != matched.sample_uid {
                queue_picks.push(entry);
            }
        }
    }

    let n_hard = ((hard_ratio * queue_picks.len() as f64).round() as usize).min(queue_picks.len());
    if n_hard > 0 {
        let mined = mine_hard_negatives(matched, rank_pool, queue, n_hard);
        let keep = queue_picks.len() - mined.len().min(queue_picks.len());
        queue_picks.truncate(keep);
        info.n_hard_negatives = mined.len();
        for m in mined {
            queue_picks.push(m);
        }
    }
    info.n_queue_negatives = queue_picks.len() - info.n_hard_negatives;
    for p in queue_picks {
        embeddings.push(p.embedding.clone());
    }

    if embeddings.len() < 2 {
        return Err(PtrError::EmptyNegativePool);
    }
    Ok((
        CandidateSet {
            matched_uid: matched.sample_uid,
            embeddings,
        },
        info,
    ))
}

fn mine_hard_negatives<'a>(
    matched: &TargetEmbedding,
    rank_pool: &'a [TargetEmbedding],
    queue: &'a FifoQueue,
    n_hard: usize,
) -> Vec<&'a TargetEmbedding> {
    let mut pool: Vec<&TargetEmbedding> = rank_pool
        .iter()
        .chain(queue.iter())
        .filter(|t| t.sample_uid != matched.sample_uid)
        .collect();
    pool.sort_by(|a, b| {
        let a_other_task = a.task_id != matched.task_id;
        let b_other_task = b.task_id != matched.task_id;
        a_other_task
            .cmp(&b_other_task)
            .then_with(|| {
                let da = state_dist2(&a.state, &matched.state);
                let db = state_dist2(&b.state, &matched.state);
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| a.sample_uid.cmp(&b.sample_uid))
    });
    pool.truncate(n_hard);
    pool
}

fn state_dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// gamma^(delta/delta_max): discounts identification confidence for
/// targets observed far past the chunk end.
pub fn offset_discount(gamma: f64, delta: u32, delta_max: u32) -> f64 {
    if delta_max == 0 {
        return 1.0;
    }
    gamma.powf(delta as f64 / delta_max as f64)
}
