//! Flat parameter snapshots: one little-endian `f64` blob per snapshot
//! plus a JSON sidecar listing named shaped entries and optional metadata.
//! Used for policy checkpoints and dataset dumps.

use crate::error::{PtrError, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntryMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset into the blob, counted in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    entries: Vec<EntryMeta>,
    total_len: usize,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Accumulates named arrays, then writes `<stem>.bin` + `<stem>.json`.
#[derive(Debug, Default)]
pub struct SnapshotWriter {
    entries: Vec<EntryMeta>,
    values: Vec<f64>,
}

impl SnapshotWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
        if data.len() != rows * cols {
            return Err(PtrError::ShapeMismatch(format!(
                "snapshot entry {name}: {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(PtrError::InvalidArgument(format!(
                "snapshot entry {name} already present"
            )));
        }
        self.entries.push(EntryMeta {
            name: name.to_string(),
            rows,
            cols,
            offset: self.values.len(),
        });
        self.values.extend_from_slice(data);
        Ok(())
    }

    pub fn write(self, dir: &Path, stem: &str, extra: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let sidecar = Sidecar {
            total_len: self.values.len(),
            entries: self.entries,
            extra,
        };
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut bin = std::fs::File::create(dir.join(format!("{stem}.bin")))?;
        bin.write_all(&bytes)?;
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }
}

/// A snapshot read back from disk.
#[derive(Debug)]
pub struct Snapshot {
    entries: HashMap<String, EntryMeta>,
    order: Vec<String>,
    values: Vec<f64>,
    pub extra: serde_json::Value,
}

impl Snapshot {
    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let sidecar: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join(format!("{stem}.bin")))?.read_to_end(&mut bytes)?;
        if bytes.len() != sidecar.total_len * 8 {
            return Err(PtrError::SnapshotCorrupt(format!(
                "blob holds {} bytes, sidecar expects {}",
                bytes.len(),
                sidecar.total_len * 8
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut entries = HashMap::new();
        let mut order = Vec::new();
        for e in sidecar.entries {
            let end = e.offset + e.rows * e.cols;
            if end > values.len() {
                return Err(PtrError::SnapshotCorrupt(format!(
                    "entry {} overruns blob ({} > {})",
                    e.name,
                    end,
                    values.len()
                )));
            }
            order.push(e.name.clone());
            entries.insert(e.name.clone(), e);
        }
        Ok(Self {
            entries,
            order,
            values,
            extra: sidecar.extra,
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Result<(&EntryMeta, &[f64])> {
        let meta = self.entries.get(name).ok_or_else(|| {
            PtrError::SnapshotCorrupt(format!("snapshot entry {name} missing"))
        })?;
        let data = &self.values[meta.offset..meta.offset + meta.rows * meta.cols];
        Ok((meta, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = SnapshotWriter::new();
        let a = vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.1 + 0.2];
        w.push("a", 1, 5, &a).unwrap();
        w.push("b", 2, 2, &[9.0, 8.0, 7.0, 6.0]).unwrap();
        w.write(dir.path(), "snap", serde_json::json!({"step": 17}))
            .unwrap();

        let s = Snapshot::read(dir.path(), "snap").unwrap();
        let (meta, data) = s.get("a").unwrap();
        assert_eq!((meta.rows, meta.cols), (1, 5));
        for (x, y) in a.iter().zip(data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(s.extra["step"], 17);
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut w = SnapshotWriter::new();
        w.push("x", 1, 1, &[1.0]).unwrap();
        assert!(w.push("x", 1, 1, &[2.0]).is_err());
    }

    #[test]
    fn truncated_blob_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = SnapshotWriter::new();
        w.push("x", 1, 4, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        w.write(dir.path(), "snap", serde_json::Value::Null).unwrap();
        let bin = dir.path().join("snap.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(Snapshot::read(dir.path(), "snap").is_err());
    }
}
