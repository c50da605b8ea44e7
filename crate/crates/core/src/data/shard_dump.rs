//! On-disk shard format.
//!
//! A directory holding `manifest.json` plus one `client_NNNN.bin` per client.
//! Each blob is the client's training rows followed by its test rows, every
//! feature a little-endian `f32`, row-major. Labels, class sets and the
//! SHA-256 of every blob live in the manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CgpflError, Result};

use super::{validate_shards, ClientShard, Dataset};

pub const SHARD_FORMAT: &str = "cgpfl-shards/1";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub client_id: usize,
    pub file: String,
    pub sha256: String,
    pub class_set: Vec<usize>,
    pub context: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub format: String,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Free-form description of how the shards were produced.
    pub source: serde_json::Value,
    pub clients: Vec<ShardEntry>,
}

fn blob(shard: &ClientShard) -> Vec<u8> {
    let mut out = Vec::with_capacity((shard.train.features.len() + shard.test.features.len()) * 4);
    for v in shard.train.features.iter().chain(&shard.test.features) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `shards` into `dir` (created if missing) and returns the manifest.
pub fn write_shards(
    dir: impl AsRef<Path>,
    shards: &[ClientShard],
    source: serde_json::Value,
) -> Result<ShardManifest> {
    let dir = dir.as_ref();
    let (input_dim, num_classes) = validate_shards(shards)?;
    fs::create_dir_all(dir)?;
    let mut clients = Vec::with_capacity(shards.len());
    for s in shards {
        let bytes = blob(s);
        let file = format!("client_{:04}.bin", s.client_id);
        fs::write(dir.join(&file), &bytes)?;
        clients.push(ShardEntry {
            client_id: s.client_id,
            file,
            sha256: sha256_hex(&bytes),
            class_set: s.class_set.iter().copied().collect(),
            context: s.context,
            n_train: s.train.len(),
            n_test: s.test.len(),
            train_labels: s.train.labels.clone(),
            test_labels: s.test.labels.clone(),
        });
    }
    let manifest = ShardManifest {
        format: SHARD_FORMAT.to_string(),
        input_dim,
        num_classes,
        source,
        clients,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CgpflError::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST), json)?;
    Ok(manifest)
}

pub fn read_shards(dir: impl AsRef<Path>) -> Result<(ShardManifest, Vec<ClientShard>)> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: ShardManifest =
        serde_json::from_str(&text).map_err(|e| CgpflError::Format(format!("{MANIFEST}: {e}")))?;
    if manifest.format != SHARD_FORMAT {
        return Err(CgpflError::Format(format!(
            "unsupported shard format {:?}",
            manifest.format
        )));
    }
    let d = manifest.input_dim;
    let mut shards = Vec::with_capacity(manifest.clients.len());
    for e in &manifest.clients {
        let bytes = fs::read(dir.join(&e.file))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(CgpflError::Format(format!("{}: checksum mismatch", e.file)));
        }
        if e.train_labels.len() != e.n_train || e.test_labels.len() != e.n_test {
            return Err(CgpflError::Format(format!("{}: label count mismatch", e.file)));
        }
        let expected = (e.n_train + e.n_test) * d * 4;
        if bytes.len() != expected {
            return Err(CgpflError::Format(format!(
                "{}: {} bytes, expected {expected}",
                e.file,
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let split = e.n_train * d;
        let train = Dataset::new(values[..split].to_vec(), e.train_labels.clone(), d, manifest.num_classes)?;
        let test = Dataset::new(values[split..].to_vec(), e.test_labels.clone(), d, manifest.num_classes)?;
        shards.push(ClientShard {
            client_id: e.client_id,
            train,
            test,
            class_set: e.class_set.iter().copied().collect::<BTreeSet<_>>(),
            context: e.context,
        });
    }
    validate_shards(&shards)?;
    Ok((manifest, shards))
}
