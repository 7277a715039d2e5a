//! Trajectory-level training-data corruptions. Applied after generation,
//! so recorded futures keep reflecting the originally executed path;
//! evaluation rollouts are never touched.

use crate::bench::world::{Dataset, Quality, SampleRecord, WorldConfig};
use crate::error::{PtrError, Result};
use crate::numerics::rng::phase;
use crate::numerics::SeededRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    None,
    /// Gaussian noise on recorded action chunks.
    Ani,
    /// Truncation to a random fraction of the episode.
    Tt,
    /// Instruction reassignment to a different task.
    Ln,
    Combined,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    pub mode: CorruptionMode,
    /// Noise std in normalized action units (fractions of a_max).
    pub ani_sigma: f64,
    pub ani_frac: f64,
    pub tt_frac: f64,
    pub tt_keep_lo: f64,
    pub tt_keep_hi: f64,
    pub ln_frac: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            mode: CorruptionMode::None,
            ani_sigma: 0.1,
            ani_frac: 0.30,
            tt_frac: 0.25,
            tt_keep_lo: 0.40,
            tt_keep_hi: 0.70,
            ln_frac: 0.20,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("ani_frac", self.ani_frac),
            ("tt_frac", self.tt_frac),
            ("ln_frac", self.ln_frac),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(PtrError::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {f}"
                )));
            }
        }
        if self.ani_sigma < 0.0 {
            return Err(PtrError::InvalidConfig("ani_sigma must be >= 0".into()));
        }
        if !(0.0 < self.tt_keep_lo && self.tt_keep_lo <= self.tt_keep_hi && self.tt_keep_hi <= 1.0)
        {
            return Err(PtrError::InvalidConfig(
                "tt keep range must satisfy 0 < lo <= hi <= 1".into(),
            ));
        }
        Ok(())
    }

    fn ani_on(&self) -> bool {
        matches!(self.mode, CorruptionMode::Ani | CorruptionMode::Combined)
    }

    fn tt_on(&self) -> bool {
        matches!(self.mode, CorruptionMode::Tt | CorruptionMode::Combined)
    }

    fn ln_on(&self) -> bool {
        matches!(self.mode, CorruptionMode::Ln | CorruptionMode::Combined)
    }
}

/// Draws round(frac * n) distinct trajectory ids.
fn pick_trajectories(n: usize, frac: f64, rng: &mut SeededRng) -> BTreeSet<usize> {
    let count = ((frac * n as f64).round() as usize).min(n);
    rng.sample_without_replacement(n, count).into_iter().collect()
}

/// Applies the configured protocols to a dataset copy. Every record of a
/// touched trajectory is labeled corrupted; truncation drops records whose
/// action chunk no longer fits and invalidates futures beyond the cut.
pub fn apply_corruption(
    ds: &Dataset,
    spec: &CorruptionSpec,
    world: &WorldConfig,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    if spec.mode == CorruptionMode::None {
        return Ok(ds.clone());
    }
    let n_traj = ds.n_trajectories();
    let mut pick_rng = SeededRng::stream(seed, phase::CORRUPT, 0);
    let ani_set = if spec.ani_on() {
        pick_trajectories(n_traj, spec.ani_frac, &mut pick_rng)
    } else {
        BTreeSet::new()
    };
    let tt_set = if spec.tt_on() {
        pick_trajectories(n_traj, spec.tt_frac, &mut pick_rng)
    } else {
        BTreeSet::new()
    };
    let ln_set = if spec.ln_on() {
        pick_trajectories(n_traj, spec.ln_frac, &mut pick_rng)
    } else {
        BTreeSet::new()
    };

    // per-trajectory decisions that must be shared across its records
    let mut keep_steps = vec![usize::MAX; n_traj];
    let mut new_task = vec![usize::MAX; n_traj];
    for &tid in &tt_set {
        let mut rng = SeededRng::stream(seed, phase::CORRUPT, 1_000_000 + tid as u64);
        let keep = rng.uniform_in(spec.tt_keep_lo, spec.tt_keep_hi);
        keep_steps[tid] = (keep * world.episode_steps as f64).round() as usize;
    }
    for &tid in &ln_set {
        let mut rng = SeededRng::stream(seed, phase::CORRUPT, 2_000_000 + tid as u64);
        let old = ds.trajectories[tid].task_id;
        let mut pick = rng.below(world.n_tasks.saturating_sub(1).max(1));
        if pick >= old {
            pick += 1;
        }
        new_task[tid] = pick.min(world.n_tasks - 1);
    }

    let mut records: Vec<SampleRecord> = Vec::with_capacity(ds.records.len());
    for r in &ds.records {
        let tid = r.traj_id;
        let touched =
            ani_set.contains(&tid) || tt_set.contains(&tid) || ln_set.contains(&tid);
        let mut rec = r.clone();
        if tt_set.contains(&tid) {
            let kept = keep_steps[tid];
            let start = r.chunk_index * world.chunk_stride;
            if start + world.chunk_len > kept {
                continue;
            }
            if start + r.delta > kept {
                rec.future_obs = None;
            }
        }
        if ani_set.contains(&tid) {
            let mut rng =
                SeededRng::stream(seed, phase::CORRUPT, 3_000_000 + rec.uid);
            let sigma = spec.ani_sigma * world.a_max;
            for v in rec.action_chunk.data_mut() {
                *v += sigma * rng.normal();
            }
        }
        if ln_set.contains(&tid) {
            rec.task_id = new_task[tid];
        }
        if touched {
            rec.quality = Quality::Corrupted;
        }
        records.push(rec);
    }

    Ok(Dataset {
        records,
        trajectories: ds.trajectories.clone(),
        delta_max: ds.delta_max,
    })
}
