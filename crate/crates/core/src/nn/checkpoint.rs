use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the binary file.
    pub offset: usize,
    /// `param`, `adam_m` or `adam_v`.
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub optimizer_step: u64,
    pub entries: Vec<ManifestEntry>,
    /// Caller-defined metadata (model config, epoch, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn manifest_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes the store as little-endian `f32` values (parameters, then both
/// AdamW moments) plus a JSON manifest next to it.
pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>, meta: serde_json::Value) -> Result<CheckpointManifest> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(store.len() * 12);
    let mut entries = Vec::new();
    for (group, buf) in [("param", &store.values), ("adam_m", &store.m), ("adam_v", &store.v)] {
        let base = bytes.len();
        for e in &store.entries {
            entries.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                offset: base + e.id.offset * 4,
                group: group.to_string(),
            });
        }
        for x in buf.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        optimizer_step: store.step,
        entries,
        meta,
    };
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let mpath = manifest_path(path.as_ref());
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if m.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", m.format_version)));
    }
    Ok(m)
}

/// Loads values and optimizer state into a store with the same layout.
pub fn load_checkpoint(store: &mut ParamStore, path: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = store.len();
    if bytes.len() != n * 12 {
        return Err(Error::Checkpoint(format!("{} bytes for a store of {n} values", bytes.len())));
    }
    for me in manifest.entries.iter().filter(|e| e.group == "param") {
        let Some(id) = store.param(&me.name) else {
            return Err(Error::Checkpoint(format!("unknown tensor `{}`", me.name)));
        };
        let shape = store.names().find(|(nm, _, _)| *nm == me.name).map(|(_, s, _)| s.to_vec());
        if shape.as_deref() != Some(me.shape.as_slice()) || me.offset != id.offset * 4 {
            return Err(Error::Checkpoint(format!("layout mismatch for `{}`", me.name)));
        }
    }
    if manifest.entries.iter().filter(|e| e.group == "param").count() != store.entries.len() {
        return Err(Error::Checkpoint("tensor count mismatch".into()));
    }
    let read = |k: usize| -> Vec<f32> {
        bytes[k * n * 4..(k + 1) * n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    };
    let values = read(0);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    store.values_mut().copy_from_slice(&values);
    store.m = read(1);
    store.v = read(2);
    store.step = manifest.optimizer_step;
    store.grads = None;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpBlock;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ParamStore::new();
        MlpBlock::new(&mut a, "m", 3, 16, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut b = ParamStore::new();
        MlpBlock::new(&mut b, "m", 3, 16, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a.values(), b.values());
        let path = dir.path().join("ckpt_000001.bin");
        save_checkpoint(&a, &path, serde_json::json!({"epoch": 1})).unwrap();
        let m = load_checkpoint(&mut b, &path).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(m.meta["epoch"], 1);

        let mut c = ParamStore::new();
        MlpBlock::new(&mut c, "m", 3, 8, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(load_checkpoint(&mut c, &path).is_err());
    }
}
