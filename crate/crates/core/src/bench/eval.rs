//! Closed-loop evaluation in the clean world.
//!
//! The policy plans one chunk at a time from its own observations and
//! belief state; the world executes the planned commands with the neutral
//! embodiment (zero offset). Corruption never touches this path.

use crate::bench::policy::PolicyBundle;
use crate::bench::world::{
    expert_displacement, obs_features, proprio_state, world_step, WorldConfig, ACTION_DIM,
};
use crate::error::{PtrError, Result};
use crate::numerics::rng::phase;
use crate::numerics::SeededRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Chunks planned per episode; horizon = horizon_chunks * chunk_len steps.
    pub horizon_chunks: usize,
    pub denoise_steps: usize,
    pub success_radius: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            horizon_chunks: 8,
            denoise_steps: 4,
            success_radius: 0.1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.horizon_chunks == 0 || self.denoise_steps == 0 {
            return Err(PtrError::InvalidConfig(
                "eval needs positive episodes, horizon, and denoise steps".into(),
            ));
        }
        if !(self.success_radius.is_finite() && self.success_radius > 0.0) {
            return Err(PtrError::InvalidConfig(
                "success_radius must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_final_distance: f64,
    /// Mean squared gap between planned commands and the expert's desired
    /// displacements along the visited states, in raw action units.
    pub chunk_mse: f64,
    pub episodes: usize,
}

pub fn evaluate_policy(
    policy: &PolicyBundle,
    world: &WorldConfig,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    cfg.validate()?;
    world.validate()?;
    let mut hits = 0usize;
    let mut dist_sum = 0.0;
    let mut mse_sum = 0.0;
    let mut mse_count = 0usize;
    for ep in 0..cfg.episodes {
        let task_id = ep % world.n_tasks;
        let goal = world.goal(task_id);
        let mut rng = SeededRng::stream(seed, phase::EVAL, 600_000 + ep as u64);
        let mut p = [
            rng.uniform_in(-world.start_box, world.start_box),
            rng.uniform_in(-world.start_box, world.start_box),
        ];
        let mut z = policy.tokenizer.z_init().to_vec();
        for _ in 0..cfg.horizon_chunks {
            let obs = obs_features(p);
            let state = proprio_state(p);
            let (chunk, z_next) =
                policy.plan(&obs, &state, task_id, &z, cfg.denoise_steps, &mut rng)?;
            z = z_next;
            for i in 0..chunk.rows() {
                let row = chunk.row(i);
                let desired = expert_displacement(p, goal, world.kp, world.a_max);
                for j in 0..ACTION_DIM {
                    let err = row[j] - desired[j];
                    mse_sum += err * err;
                }
                mse_count += ACTION_DIM;
                p = world_step(p, [row[0], row[1]], [0.0, 0.0], world.a_max);
            }
        }
        let dist = ((p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2)).sqrt();
        dist_sum += dist;
        if dist < cfg.success_radius {
            hits += 1;
        }
    }
    Ok(EvalReport {
        success_rate: hits as f64 / cfg.episodes as f64,
        mean_final_distance: dist_sum / cfg.episodes as f64,
        chunk_mse: mse_sum / mse_count.max(1) as f64,
        episodes: cfg.episodes,
    })
}
