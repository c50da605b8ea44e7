//! Label-skewed partitioning of a pooled dataset into client shards.
//!
//! Each client draws a uniformly random set of `classes_per_client` labels and
//! a shard size uniform in `[shard_size_min, shard_size_max]`. The shard takes
//! one sample of every chosen class first (so the label support is exactly
//! the class set), then fills up uniformly from the remaining samples of its
//! classes. The shard is shuffled and split `train_fraction` / rest.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgpflError, Result};
use crate::rng::stream_rng;

use super::{split_shard, ClientShard, Dataset};

/// Whether different clients may receive the same pool sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Samples are consumed; running out is an error.
    #[default]
    Disjoint,
    /// Every client samples from the full pool of its classes (still without
    /// replacement inside one shard).
    ReuseAcrossClients,
}

fn d_clients() -> usize {
    40
}
fn d_classes() -> usize {
    3
}
fn d_min() -> usize {
    400
}
fn d_max() -> usize {
    5000
}
fn d_frac() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    #[serde(default = "d_clients")]
    pub num_clients: usize,
    #[serde(default = "d_classes")]
    pub classes_per_client: usize,
    #[serde(default = "d_min")]
    pub shard_size_min: usize,
    #[serde(default = "d_max")]
    pub shard_size_max: usize,
    #[serde(default = "d_frac")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingMode,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            num_clients: d_clients(),
            classes_per_client: d_classes(),
            shard_size_min: d_min(),
            shard_size_max: d_max(),
            train_fraction: d_frac(),
            seed: 0,
            sampling: SamplingMode::Disjoint,
        }
    }
}

impl PartitionConfig {
    fn validate(&self) -> Result<()> {
        if self.num_clients == 0 || self.classes_per_client == 0 {
            return Err(CgpflError::config(
                "num_clients and classes_per_client must be >= 1",
            ));
        }
        if self.shard_size_min > self.shard_size_max {
            return Err(CgpflError::config("shard_size_min > shard_size_max"));
        }
        if self.shard_size_min < self.classes_per_client {
            return Err(CgpflError::config(
                "shard_size_min must be at least classes_per_client",
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CgpflError::config("train_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

pub fn partition_noniid(pool: &Dataset, cfg: &PartitionConfig) -> Result<Vec<ClientShard>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0xDA7A);

    // per-class index pools, shuffled once
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); pool.num_classes];
    for (i, &y) in pool.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for v in &mut by_class {
        v.shuffle(&mut rng);
    }
    let present: Vec<usize> = (0..pool.num_classes)
        .filter(|&c| !by_class[c].is_empty())
        .collect();
    if present.len() < cfg.classes_per_client {
        return Err(CgpflError::config(format!(
            "pool has {} distinct labels, {} needed per client",
            present.len(),
            cfg.classes_per_client
        )));
    }

    let mut remaining = by_class.clone();
    let mut shards = Vec::with_capacity(cfg.num_clients);
    for client in 0..cfg.num_clients {
        let mut classes: Vec<usize> = index::sample(&mut rng, present.len(), cfg.classes_per_client)
            .into_iter()
            .map(|i| present[i])
            .collect();
        classes.sort_unstable();
        let size = rng.random_range(cfg.shard_size_min..=cfg.shard_size_max);

        let mut local: Vec<Vec<usize>> = match cfg.sampling {
            SamplingMode::Disjoint => classes.iter().map(|&c| std::mem::take(&mut remaining[c])).collect(),
            SamplingMode::ReuseAcrossClients => classes.iter().map(|&c| by_class[c].clone()).collect(),
        };
        let picked = draw(&classes, &mut local, size, &mut rng);
        if cfg.sampling == SamplingMode::Disjoint {
            for (c, rest) in classes.iter().zip(local) {
                remaining[*c] = rest;
            }
        }
        let picked = picked?;
        shards.push(split_shard(client, pool, picked, cfg.train_fraction, &mut rng));
    }
    Ok(shards)
}

/// Takes `size` indices out of the per-class pools, one per class first.
fn draw<R: Rng + ?Sized>(
    classes: &[usize],
    pools: &mut [Vec<usize>],
    size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let available: usize = pools.iter().map(Vec::len).sum();
    if let Some(pos) = pools.iter().position(Vec::is_empty) {
        return Err(CgpflError::Exhausted {
            class: classes[pos],
            requested: size,
            available,
        });
    }
    if available < size {
        let pos = (0..pools.len()).min_by_key(|&i| pools[i].len()).unwrap_or(0);
        return Err(CgpflError::Exhausted {
            class: classes[pos],
            requested: size,
            available,
        });
    }
    let mut picked = Vec::with_capacity(size);
    for p in pools.iter_mut() {
        picked.push(p.pop().expect("non-empty"));
    }
    let rest = size - picked.len();
    let total = available - pools.len();
    let mut chosen: Vec<usize> = index::sample(rng, total, rest).into_vec();
    // remove from the back so earlier positions stay valid
    chosen.sort_unstable_by(|a, b| b.cmp(a));
    for flat in chosen {
        let mut off = flat;
        for p in pools.iter_mut() {
            if off < p.len() {
                picked.push(p.swap_remove(off));
                break;
            }
            off -= p.len();
        }
    }
    Ok(picked)
}
