//! Datasets, client shards and the ways to produce them.

mod idx;
mod partition;
mod shard_dump;
mod synth;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgpflError, Result};
use crate::model::Batch;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{partition_noniid, PartitionConfig, SamplingMode};
pub use shard_dump::{read_shards, write_shards, ShardEntry, ShardManifest, SHARD_FORMAT};
pub use synth::{synth_contexts, SynthConfig};

/// Row-major samples with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if features.len() != labels.len() * input_dim {
            return Err(CgpflError::DimensionMismatch {
                what: "dataset features",
                expected: labels.len() * input_dim,
                found: features.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(CgpflError::Format(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// The whole dataset as one batch.
    pub fn batch(&self) -> Result<Batch<'_>> {
        Batch::new(&self.features, &self.labels, self.input_dim)
    }

    /// Copies the given rows, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        }
    }

    pub fn label_set(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }
}

/// One client's data: a train/test split restricted to `class_set`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: Dataset,
    pub test: Dataset,
    pub class_set: BTreeSet<usize>,
    /// Ground-truth context for synthetic data; `None` otherwise.
    pub context: Option<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of training rows for a shard of `n` samples.
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    ((n as f64) * train_fraction).round().clamp(0.0, n as f64) as usize
}

/// Shuffles `indices` of `pool` and splits them into a client shard.
pub(crate) fn split_shard<R: Rng + ?Sized>(
    client_id: usize,
    pool: &Dataset,
    mut indices: Vec<usize>,
    train_fraction: f64,
    rng: &mut R,
) -> ClientShard {
    indices.shuffle(rng);
    let n_train = train_size(indices.len(), train_fraction);
    let train = pool.gather(&indices[..n_train]);
    let test = pool.gather(&indices[n_train..]);
    let class_set = indices.iter().map(|&i| pool.labels[i]).collect();
    ClientShard {
        client_id,
        train,
        test,
        class_set,
        context: None,
    }
}

/// Checks that all shards agree on dimensions and ids run `0..N`.
pub fn validate_shards(shards: &[ClientShard]) -> Result<(usize, usize)> {
    let first = shards
        .first()
        .ok_or_else(|| CgpflError::config("no client shards"))?;
    let (d, c) = (first.train.input_dim, first.train.num_classes);
    for (i, s) in shards.iter().enumerate() {
        if s.client_id != i {
            return Err(CgpflError::config(format!(
                "shard at position {i} has client_id {}",
                s.client_id
            )));
        }
        for ds in [&s.train, &s.test] {
            if ds.input_dim != d || ds.num_classes != c {
                return Err(CgpflError::config(format!(
                    "client {i} shard has input_dim {} / {} classes, expected {d} / {c}",
                    ds.input_dim, ds.num_classes
                )));
            }
        }
        if s.train.is_empty() {
            return Err(CgpflError::config(format!("client {i} has no training data")));
        }
    }
    Ok((d, c))
}

/// How a run obtains its shards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    Idx {
        images: std::path::PathBuf,
        labels: std::path::PathBuf,
        #[serde(default)]
        partition: PartitionConfig,
    },
    Shards {
        dir: std::path::PathBuf,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Vec<ClientShard>> {
        match self {
            DataSource::Synthetic(cfg) => synth_contexts(cfg),
            DataSource::Idx {
                images,
                labels,
                partition,
            } => {
                let pool = load_idx(images, labels)?;
                partition_noniid(&pool, partition)
            }
            DataSource::Shards { dir } => read_shards(dir).map(|(_, shards)| shards),
        }
    }
}
