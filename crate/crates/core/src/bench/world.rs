//! Synthetic multi-source demonstration world: a 2-D point mass steered
//! toward per-task goals by a scripted expert, recorded as chunked
//! training tuples across several embodiments.
//!
//! Embodiment m executes motor command a as displacement a - offset_m, an
//! actuator bias; the expert compensates, so positions evolve identically
//! across sources while the recorded actions differ by a constant. That
//! makes "same semantic progress, different actions" literal. Observation
//! features are functions of position only and never identify the goal,
//! so the instruction is load-bearing and instruction noise is detectable
//! from future observations.

use crate::error::{PtrError, Result};
use crate::numerics::rng::phase;
use crate::numerics::{DenseMatrix, SeededRng};
use serde::{Deserialize, Serialize};

pub const OBS_DIM: usize = 16;
pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_sources: usize,
    pub n_tasks: usize,
    /// Trajectories per (task, source) pair.
    pub trajs_per_pair: usize,
    pub episode_steps: usize,
    /// Action-chunk length L.
    pub chunk_len: usize,
    /// Steps between consecutive chunk starts.
    pub chunk_stride: usize,
    /// Future-observation offsets, cycled per chunk (largest is Delta_max).
    pub deltas: Vec<usize>,
    /// Fraction of records whose future observation is dropped.
    pub missing_future_frac: f64,
    /// Expert proportional gain toward the goal.
    pub kp: f64,
    /// Per-step displacement cap, also the action normalization scale.
    pub a_max: f64,
    /// Std of the expert's exploration noise, in displacement units.
    pub expert_noise: f64,
    /// Magnitude of the per-source actuator bias (source 0 is unbiased).
    pub offset_scale: f64,
    /// Goal ring radius; goals sit at n_tasks equispaced angles.
    pub goal_radius: f64,
    /// Starts are uniform in [-start_box, start_box]^2.
    pub start_box: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_sources: 3,
            n_tasks: 4,
            trajs_per_pair: 25,
            episode_steps: 72,
            chunk_len: 16,
            chunk_stride: 8,
            deltas: vec![16, 20, 24],
            missing_future_frac: 0.05,
            kp: 0.9,
            a_max: 0.08,
            expert_noise: 0.01,
            offset_scale: 0.03,
            goal_radius: 0.65,
            start_box: 0.9,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.n_tasks == 0 || self.trajs_per_pair == 0 {
            return Err(PtrError::InvalidConfig(
                "world needs at least one source, task, and trajectory".into(),
            ));
        }
        if self.chunk_len == 0 || self.chunk_stride == 0 {
            return Err(PtrError::InvalidConfig(
                "chunk_len and chunk_stride must be positive".into(),
            ));
        }
        if self.episode_steps < self.chunk_len {
            return Err(PtrError::InvalidConfig(
                "episode shorter than one action chunk".into(),
            ));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|&d| d == 0) {
            return Err(PtrError::InvalidConfig(
                "deltas must be nonempty and positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.missing_future_frac) {
            return Err(PtrError::InvalidConfig(
                "missing_future_frac must lie in [0, 1]".into(),
            ));
        }
        if self.a_max <= 0.0 || self.kp <= 0.0 {
            return Err(PtrError::InvalidConfig("a_max and kp must be positive".into()));
        }
        if self.expert_noise < 0.0 || self.offset_scale < 0.0 {
            return Err(PtrError::InvalidConfig(
                "noise scales must be nonnegative".into(),
            ));
        }
        if self.deltas.iter().min().copied().unwrap() > self.episode_steps {
            return Err(PtrError::InvalidConfig(
                "smallest delta exceeds the episode length".into(),
            ));
        }
        Ok(())
    }

    pub fn goal(&self, task_id: usize) -> [f64; 2] {
        let angle = std::f64::consts::TAU * (task_id as f64 + 0.5) / self.n_tasks as f64;
        [self.goal_radius * angle.cos(), self.goal_radius * angle.sin()]
    }

    pub fn source_offset(&self, source_id: usize) -> [f64; 2] {
        if source_id == 0 {
            return [0.0, 0.0];
        }
        let angle = std::f64::consts::TAU * source_id as f64 / self.n_sources.max(1) as f64;
        [
            self.offset_scale * angle.cos(),
            self.offset_scale * angle.sin(),
        ]
    }

    pub fn delta_max(&self) -> usize {
        self.deltas.iter().copied().max().unwrap_or(1)
    }

    /// Chunk start offsets within one episode.
    pub fn chunk_starts(&self) -> Vec<usize> {
        (0..=self.episode_steps - self.chunk_len)
            .step_by(self.chunk_stride)
            .collect()
    }
}

/// Bounded position features. Shares no coordinate with the goal identity.
pub fn obs_features(p: [f64; 2]) -> Vec<f64> {
    let [x, y] = p;
    use std::f64::consts::PI;
    vec![
        x,
        y,
        x * x,
        y * y,
        x * y,
        x * x + y * y,
        (PI * x).sin(),
        (PI * x).cos(),
        (PI * y).sin(),
        (PI * y).cos(),
        (2.0 * PI * x).sin(),
        (2.0 * PI * x).cos(),
        (2.0 * PI * y).sin(),
        (2.0 * PI * y).cos(),
        (x + y).tanh(),
        (x - y).tanh(),
    ]
}

/// Proprioceptive state: the planar pose padded to the fixed interface
/// width. History features (e.g. the previous displacement) are deliberately
/// excluded: with a mostly saturated expert they predict the next chunk
/// almost perfectly, and a policy that leans on them collapses in closed
/// loop where it must bootstrap from its own rollout.
pub fn proprio_state(p: [f64; 2]) -> Vec<f64> {
    vec![p[0], p[1], 0.0, 0.0]
}

fn clamp_pos(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(-1.5, 1.5), p[1].clamp(-1.5, 1.5)]
}

/// Executes one motor command under embodiment `offset`: the displacement
/// is the command minus the actuator bias, capped at a_max per axis.
pub fn world_step(p: [f64; 2], command: [f64; 2], offset: [f64; 2], a_max: f64) -> [f64; 2] {
    let dx = (command[0] - offset[0]).clamp(-a_max, a_max);
    let dy = (command[1] - offset[1]).clamp(-a_max, a_max);
    clamp_pos([p[0] + dx, p[1] + dy])
}

/// Expert desired displacement toward the goal (before bias compensation).
pub fn expert_displacement(p: [f64; 2], goal: [f64; 2], kp: f64, a_max: f64) -> [f64; 2] {
    [
        (kp * (goal[0] - p[0])).clamp(-a_max, a_max),
        (kp * (goal[1] - p[1])).clamp(-a_max, a_max),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quality {
    Clean,
    Corrupted,
}

/// One training tuple. Action chunks are stored in raw displacement
/// units; the policy normalizes by a_max on entry.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub uid: u64,
    pub traj_id: usize,
    pub source_id: usize,
    pub task_id: usize,
    pub chunk_index: usize,
    pub obs: Vec<f64>,
    pub state: Vec<f64>,
    /// L x 2 motor commands.
    pub action_chunk: DenseMatrix,
    pub future_obs: Option<Vec<f64>>,
    pub delta: usize,
    pub quality: Quality,
}

impl SampleRecord {
    pub fn is_valid(&self) -> bool {
        self.future_obs.is_some()
    }
}

/// One generated episode before flattening into records.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub traj_id: usize,
    pub source_id: usize,
    pub task_id: usize,
    /// episode_steps + 1 positions.
    pub positions: Vec<[f64; 2]>,
    /// episode_steps motor commands (bias-compensated expert actions).
    pub commands: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub trajectories: Vec<Trajectory>,
    pub delta_max: usize,
}

impl Dataset {
    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    /// Record indices grouped by trajectory, in chunk order.
    pub fn records_of(&self, traj_id: usize) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.traj_id == traj_id)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Rolls out one expert episode. The rng stream must be keyed by
/// (task, repetition) only: sources replay identical start and noise
/// draws, which pins their position paths to each other exactly.
fn expert_episode(cfg: &WorldConfig, task_id: usize, source_id: usize, rng: &mut SeededRng) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let goal = cfg.goal(task_id);
    let offset = cfg.source_offset(source_id);
    let mut p = [
        rng.uniform_in(-cfg.start_box, cfg.start_box),
        rng.uniform_in(-cfg.start_box, cfg.start_box),
    ];
    let mut positions = Vec::with_capacity(cfg.episode_steps + 1);
    let mut commands = Vec::with_capacity(cfg.episode_steps);
    positions.push(p);
    for _ in 0..cfg.episode_steps {
        let noise = [
            cfg.expert_noise * rng.normal(),
            cfg.expert_noise * rng.normal(),
        ];
        let desired = expert_displacement(p, cfg.goal(task_id), cfg.kp, cfg.a_max);
        let desired = [
            (desired[0] + noise[0]).clamp(-cfg.a_max, cfg.a_max),
            (desired[1] + noise[1]).clamp(-cfg.a_max, cfg.a_max),
        ];
        // compensated command: command - offset == desired displacement.
        // Execution applies `desired` directly rather than re-deriving it
        // from (command, offset), so source position paths stay bit-equal.
        let command = [desired[0] + offset[0], desired[1] + offset[1]];
        p = clamp_pos([p[0] + desired[0], p[1] + desired[1]]);
        positions.push(p);
        commands.push(command);
    }
    debug_assert!((positions.last().unwrap()[0] - goal[0]).is_finite());
    (positions, commands)
}

/// Generates the full multi-source dataset. Deterministic in `seed`.
pub fn generate_world(cfg: &WorldConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut trajectories = Vec::new();
    let mut traj_id = 0usize;
    for task_id in 0..cfg.n_tasks {
        for rep in 0..cfg.trajs_per_pair {
            let episode_key = (task_id * cfg.trajs_per_pair + rep) as u64;
            for source_id in 0..cfg.n_sources {
                let mut rng = SeededRng::stream(seed, phase::WORLD, episode_key);
                let (positions, commands) = expert_episode(cfg, task_id, source_id, &mut rng);
                trajectories.push(Trajectory {
                    traj_id,
                    source_id,
                    task_id,
                    positions,
                    commands,
                });
                traj_id += 1;
            }
        }
    }

    let mut records = Vec::new();
    let mut uid = 0u64;
    let delta_max = cfg.delta_max();
    // separate stream for record-level bookkeeping (missing futures)
    let mut drop_rng = SeededRng::stream(seed, phase::WORLD, u64::MAX >> 16);
    for traj in &trajectories {
        for (chunk_index, &start) in cfg.chunk_starts().iter().enumerate() {
            let allowed: Vec<usize> = cfg
                .deltas
                .iter()
                .copied()
                .filter(|&d| start + d <= cfg.episode_steps)
                .collect();
            if allowed.is_empty() {
                continue;
            }
            let delta = allowed[chunk_index % allowed.len()];
            let p = traj.positions[start];
            let mut chunk = DenseMatrix::zeros(cfg.chunk_len, ACTION_DIM);
            for i in 0..cfg.chunk_len {
                let c = traj.commands[start + i];
                chunk.set(i, 0, c[0]);
                chunk.set(i, 1, c[1]);
            }
            let future = if drop_rng.uniform() < cfg.missing_future_frac {
                None
            } else {
                Some(obs_features(traj.positions[start + delta]))
            };
            records.push(SampleRecord {
                uid,
                traj_id: traj.traj_id,
                source_id: traj.source_id,
                task_id: traj.task_id,
                chunk_index,
                obs: obs_features(p),
                state: proprio_state(p),
                action_chunk: chunk,
                future_obs: future,
                delta,
                quality: Quality::Clean,
            });
            uid += 1;
        }
    }
    Ok(Dataset {
        records,
        trajectories,
        delta_max,
    })
}

/// Fraction of expert episodes ending within `radius` of the goal, over
/// freshly drawn starts. The generator's own sanity check.
pub fn expert_success(cfg: &WorldConfig, seed: u64, episodes: usize, radius: f64) -> Result<f64> {
    cfg.validate()?;
    let mut hits = 0usize;
    for ep in 0..episodes {
        let task_id = ep % cfg.n_tasks;
        let mut rng = SeededRng::stream(seed, phase::EVAL, 500_000 + ep as u64);
        let (positions, _) = expert_episode(cfg, task_id, 0, &mut rng);
        let goal = cfg.goal(task_id);
        let last = positions.last().unwrap();
        let dist = ((last[0] - goal[0]).powi(2) + (last[1] - goal[1]).powi(2)).sqrt();
        if dist < radius {
            hits += 1;
        }
    }
    Ok(hits as f64 / episodes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        WorldConfig::default().validate().unwrap();
    }

    #[test]
    fn chunk_layout_is_eight_full_chunks() {
        let cfg = WorldConfig::default();
        assert_eq!(cfg.chunk_starts(), vec![0, 8, 16, 24, 32, 40, 48, 56]);
        assert_eq!(cfg.delta_max(), 24);
    }

    #[test]
    fn observation_features_have_no_goal_component() {
        // two different tasks, same position -> identical observations
        let p = [0.3, -0.7];
        let o = obs_features(p);
        assert_eq!(o.len(), OBS_DIM);
        assert_eq!(o, obs_features(p));
    }

    #[test]
    fn zero_noise_zero_offset_sources_coincide() {
        let cfg = WorldConfig {
            expert_noise: 0.0,
            offset_scale: 0.0,
            trajs_per_pair: 2,
            ..WorldConfig::default()
        };
        let ds = generate_world(&cfg, 7).unwrap();
        for task in 0..cfg.n_tasks {
            for rep in 0..cfg.trajs_per_pair {
                let group: Vec<&Trajectory> = ds
                    .trajectories
                    .iter()
                    .filter(|t| t.task_id == task)
                    .skip(rep * cfg.n_sources)
                    .take(cfg.n_sources)
                    .collect();
                assert_eq!(group.len(), cfg.n_sources);
                for t in &group[1..] {
                    assert_eq!(t.positions, group[0].positions);
                    assert_eq!(t.commands, group[0].commands);
                }
            }
        }
    }

    #[test]
    fn sources_share_position_paths_even_with_noise() {
        let cfg = WorldConfig {
            trajs_per_pair: 2,
            ..WorldConfig::default()
        };
        let ds = generate_world(&cfg, 11).unwrap();
        // trajectories are emitted source-major within each (task, rep)
        for group in ds.trajectories.chunks(cfg.n_sources) {
            for t in &group[1..] {
                assert_eq!(t.positions, group[0].positions);
            }
        }
    }

    #[test]
    fn recorded_commands_differ_by_the_source_offset() {
        let cfg = WorldConfig {
            trajs_per_pair: 1,
            ..WorldConfig::default()
        };
        let ds = generate_world(&cfg, 11).unwrap();
        for chunk in ds.trajectories.chunks(cfg.n_sources) {
            let base = &chunk[0];
            for t in &chunk[1..] {
                let off = cfg.source_offset(t.source_id);
                for (c, c0) in t.commands.iter().zip(&base.commands) {
                    assert!((c[0] - c0[0] - off[0]).abs() < 1e-12);
                    assert!((c[1] - c0[1] - off[1]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = WorldConfig {
            trajs_per_pair: 3,
            ..WorldConfig::default()
        };
        let a = generate_world(&cfg, 42).unwrap();
        let b = generate_world(&cfg, 42).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.obs, rb.obs);
            assert_eq!(ra.state, rb.state);
            assert_eq!(ra.action_chunk, rb.action_chunk);
            assert_eq!(ra.future_obs, rb.future_obs);
            assert_eq!(ra.delta, rb.delta);
        }
        let c = generate_world(&cfg, 43).unwrap();
        assert!(a.records.iter().zip(&c.records).any(|(x, y)| x.obs != y.obs));
    }

    #[test]
    fn record_counts_and_deltas() {
        let cfg = WorldConfig::default();
        let ds = generate_world(&cfg, 1).unwrap();
        assert_eq!(ds.trajectories.len(), 4 * 25 * 3);
        assert_eq!(ds.records.len(), 300 * 8);
        for r in &ds.records {
            assert!(cfg.deltas.contains(&r.delta));
            // last chunk starts at 56; only delta 16 fits
            if r.chunk_index == 7 {
                assert_eq!(r.delta, 16);
            }
            assert_eq!(r.obs.len(), OBS_DIM);
            assert_eq!(r.state.len(), STATE_DIM);
            assert_eq!(r.action_chunk.rows(), cfg.chunk_len);
        }
        let missing = ds.records.iter().filter(|r| !r.is_valid()).count();
        let frac = missing as f64 / ds.records.len() as f64;
        assert!((frac - 0.05).abs() < 0.03, "missing fraction {frac}");
    }

    #[test]
    fn expert_reaches_every_goal() {
        let cfg = WorldConfig::default();
        let rate = expert_success(&cfg, 3, 100, 0.05).unwrap();
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn future_obs_matches_executed_path() {
        let cfg = WorldConfig {
            trajs_per_pair: 1,
            missing_future_frac: 0.0,
            ..WorldConfig::default()
        };
        let ds = generate_world(&cfg, 5).unwrap();
        let r = &ds.records[0];
        let traj = &ds.trajectories[r.traj_id];
        let start = r.chunk_index * cfg.chunk_stride;
        let expect = obs_features(traj.positions[start + r.delta]);
        assert_eq!(r.future_obs.as_ref().unwrap(), &expect);
    }
}
