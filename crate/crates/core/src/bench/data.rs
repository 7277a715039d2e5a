//! Dataset snapshots: flat binary float arrays plus a JSON manifest,
//! reusing the parameter snapshot container. Round trips are bit-exact.

use crate::bench::world::{Dataset, Quality, SampleRecord, OBS_DIM, STATE_DIM};
use crate::error::{PtrError, Result};
use crate::numerics::{DenseMatrix, Snapshot, SnapshotWriter};
use std::path::Path;

const META_COLS: usize = 7;

/// Writes `<stem>.bin` / `<stem>.json` under `dir`. Trajectories are not
/// persisted; training and reporting consume records only.
pub fn save_dataset(ds: &Dataset, dir: &Path, stem: &str) -> Result<()> {
    let n = ds.records.len();
    if n == 0 {
        return Err(PtrError::EmptyInput("dataset"));
    }
    let chunk_len = ds.records[0].action_chunk.rows();
    let act_cols = ds.records[0].action_chunk.cols();
    let mut obs = Vec::with_capacity(n * OBS_DIM);
    let mut state = Vec::with_capacity(n * STATE_DIM);
    let mut chunks = Vec::with_capacity(n * chunk_len * act_cols);
    let mut future = vec![0.0; n * OBS_DIM];
    let mut meta = Vec::with_capacity(n * META_COLS);
    for (i, r) in ds.records.iter().enumerate() {
        if r.action_chunk.rows() != chunk_len || r.action_chunk.cols() != act_cols {
            return Err(PtrError::ShapeMismatch(
                "dataset records disagree on chunk shape".into(),
            ));
        }
        obs.extend_from_slice(&r.obs);
        state.extend_from_slice(&r.state);
        chunks.extend_from_slice(r.action_chunk.data());
        if let Some(f) = &r.future_obs {
            future[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(f);
        }
        meta.extend_from_slice(&[
            r.uid as f64,
            r.traj_id as f64,
            r.source_id as f64,
            r.task_id as f64,
            r.chunk_index as f64,
            r.delta as f64,
            match (r.is_valid(), r.quality) {
                (false, Quality::Clean) => 0.0,
                (true, Quality::Clean) => 1.0,
                (false, Quality::Corrupted) => 2.0,
                (true, Quality::Corrupted) => 3.0,
            },
        ]);
    }
    let mut w = SnapshotWriter::new();
    w.push("obs", n, OBS_DIM, &obs)?;
    w.push("state", n, STATE_DIM, &state)?;
    w.push("action_chunks", n, chunk_len * act_cols, &chunks)?;
    w.push("future_obs", n, OBS_DIM, &future)?;
    w.push("meta", n, META_COLS, &meta)?;
    w.write(
        dir,
        stem,
        serde_json::json!({
            "kind": "dataset",
            "n_records": n,
            "chunk_len": chunk_len,
            "action_dim": act_cols,
            "delta_max": ds.delta_max,
        }),
    )
}

pub fn load_dataset(dir: &Path, stem: &str) -> Result<Dataset> {
    let snap = Snapshot::read(dir, stem)?;
    let extra = &snap.extra;
    let chunk_len = extra["chunk_len"]
        .as_u64()
        .ok_or_else(|| PtrError::SnapshotCorrupt("missing chunk_len".into()))?
        as usize;
    let act_cols = extra["action_dim"]
        .as_u64()
        .ok_or_else(|| PtrError::SnapshotCorrupt("missing action_dim".into()))?
        as usize;
    let delta_max = extra["delta_max"]
        .as_u64()
        .ok_or_else(|| PtrError::SnapshotCorrupt("missing delta_max".into()))?
        as usize;
    let (obs_meta, obs) = snap.get("obs")?;
    let n = obs_meta.rows;
    let (_, state) = snap.get("state")?;
    let (_, chunks) = snap.get("action_chunks")?;
    let (_, future) = snap.get("future_obs")?;
    let (_, meta) = snap.get("meta")?;
    if meta.len() != n * META_COLS {
        return Err(PtrError::SnapshotCorrupt("meta width mismatch".into()));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let m = &meta[i * META_COLS..(i + 1) * META_COLS];
        let flags = m[6] as u8;
        let valid = flags & 1 == 1;
        let quality = if flags & 2 == 2 {
            Quality::Corrupted
        } else {
            Quality::Clean
        };
        records.push(SampleRecord {
            uid: m[0] as u64,
            traj_id: m[1] as usize,
            source_id: m[2] as usize,
            task_id: m[3] as usize,
            chunk_index: m[4] as usize,
            obs: obs[i * OBS_DIM..(i + 1) * OBS_DIM].to_vec(),
            state: state[i * STATE_DIM..(i + 1) * STATE_DIM].to_vec(),
            action_chunk: DenseMatrix::from_vec(
                chunk_len,
                act_cols,
                chunks[i * chunk_len * act_cols..(i + 1) * chunk_len * act_cols].to_vec(),
            )?,
            future_obs: if valid {
                Some(future[i * OBS_DIM..(i + 1) * OBS_DIM].to_vec())
            } else {
                None
            },
            delta: m[5] as usize,
            quality,
        });
    }
    Ok(Dataset {
        records,
        trajectories: Vec::new(),
        delta_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corrupt::{apply_corruption, CorruptionMode, CorruptionSpec};
    use crate::bench::world::{generate_world, WorldConfig};

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = WorldConfig {
            trajs_per_pair: 2,
            ..WorldConfig::default()
        };
        let ds = generate_world(&cfg, 21).unwrap();
        let spec = CorruptionSpec {
            mode: CorruptionMode::Combined,
            ..CorruptionSpec::default()
        };
        let ds = apply_corruption(&ds, &spec, &cfg, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path(), "dataset").unwrap();
        let back = load_dataset(dir.path(), "dataset").unwrap();
        assert_eq!(back.records.len(), ds.records.len());
        assert_eq!(back.delta_max, ds.delta_max);
        for (a, b) in back.records.iter().zip(&ds.records) {
            assert_eq!(a.uid, b.uid);
            assert_eq!(a.traj_id, b.traj_id);
            assert_eq!(a.source_id, b.source_id);
            assert_eq!(a.task_id, b.task_id);
            assert_eq!(a.chunk_index, b.chunk_index);
            assert_eq!(a.obs, b.obs);
            assert_eq!(a.state, b.state);
            assert_eq!(a.action_chunk, b.action_chunk);
            assert_eq!(a.future_obs, b.future_obs);
            assert_eq!(a.delta, b.delta);
            assert_eq!(a.quality, b.quality);
        }
    }
}
