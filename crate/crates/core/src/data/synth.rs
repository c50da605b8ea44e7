//! Gaussian-mixture generator with latent contexts.
//!
//! Context `c` places the centroid of class `y` at
//! `base_y + separation · u(c, y)`, where `base_y` is shared by every context
//! and `u(c, y)` is a unit direction at angle `2π (y/C + c/K*) + φ` in the
//! first two coordinates (any further coordinates get a fixed Gaussian
//! offset of norm about one). Distinct contexts therefore disagree on which
//! label lives where, and `separation = 0` makes all contexts identical.
//! Samples are `centroid + noise_std · N(0, I)`.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CgpflError, Result};
use crate::rng::stream_rng;

use super::{split_shard, ClientShard, Dataset};

fn default_noise() -> f64 {
    1.0
}

fn default_train_fraction() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_contexts: usize,
    pub clients_per_context: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub samples_per_client: usize,
    pub separation: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn num_clients(&self) -> usize {
        self.num_contexts * self.clients_per_context
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("num_contexts", self.num_contexts),
            ("clients_per_context", self.clients_per_context),
            ("input_dim", self.input_dim),
            ("num_classes", self.num_classes),
            ("samples_per_client", self.samples_per_client),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CgpflError::config(format!("synthetic {name} must be >= 1")));
            }
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(CgpflError::config("synthetic separation must be finite and >= 0"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(CgpflError::config("synthetic noise_std must be finite and >= 0"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CgpflError::config("train_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Class centroids, indexed `[context][class]`.
    pub fn centroids(&self) -> Vec<Vec<Vec<f64>>> {
        let mut rng = stream_rng(self.seed, 0xC0DE);
        let d = self.input_dim;
        let base: Vec<Vec<f64>> = (0..self.num_classes)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let phase: f64 = rng.random_range(0.0..TAU);
        let extra_scale = if d > 2 { 1.0 / ((d - 2) as f64).sqrt() } else { 0.0 };
        (0..self.num_contexts)
            .map(|c| {
                (0..self.num_classes)
                    .map(|y| {
                        let angle = TAU
                            * (y as f64 / self.num_classes as f64
                                + c as f64 / self.num_contexts as f64)
                            + phase;
                        let mut dir = vec![0.0; d];
                        dir[0] = angle.cos();
                        if d > 1 {
                            dir[1] = angle.sin();
                        }
                        for v in dir.iter_mut().skip(2) {
                            *v = extra_scale * rng.sample::<f64, _>(StandardNormal);
                        }
                        base[y]
                            .iter()
                            .zip(&dir)
                            .map(|(b, u)| b + self.separation * u)
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Generates `num_contexts * clients_per_context` shards; client `i` belongs
/// to context `i / clients_per_context`.
pub fn synth_contexts(cfg: &SynthConfig) -> Result<Vec<ClientShard>> {
    cfg.validate()?;
    let centroids = cfg.centroids();
    let (d, c) = (cfg.input_dim, cfg.num_classes);
    (0..cfg.num_clients())
        .map(|client| {
            let ctx = client / cfg.clients_per_context;
            let mut rng = stream_rng(cfg.seed, 0x5A4D_0000 + client as u64);
            let mut labels: Vec<usize> = (0..cfg.samples_per_client).map(|j| j % c).collect();
            labels.shuffle(&mut rng);
            let mut features = Vec::with_capacity(labels.len() * d);
            for &y in &labels {
                for &m in &centroids[ctx][y] {
                    features.push(m + cfg.noise_std * rng.sample::<f64, _>(StandardNormal));
                }
            }
            let pool = Dataset::new(features, labels, d, c)?;
            let idx = (0..pool.len()).collect();
            let mut shard = split_shard(client, &pool, idx, cfg.train_fraction, &mut rng);
            shard.context = Some(ctx);
            Ok(shard)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(contexts: usize, separation: f64) -> SynthConfig {
        SynthConfig {
            num_contexts: contexts,
            clients_per_context: 4,
            input_dim: 2,
            num_classes: 3,
            samples_per_client: 40,
            separation,
            noise_std: 1.0,
            train_fraction: 0.75,
            seed: 11,
        }
    }

    #[test]
    fn shapes_and_split() {
        let shards = synth_contexts(&cfg(3, 10.0)).unwrap();
        assert_eq!(shards.len(), 12);
        for (i, s) in shards.iter().enumerate() {
            assert_eq!(s.client_id, i);
            assert_eq!(s.context, Some(i / 4));
            assert_eq!(s.train.len(), 30);
            assert_eq!(s.test.len(), 10);
            assert!(s.train.label_set().is_subset(&s.class_set));
            assert!(s.test.label_set().is_subset(&s.class_set));
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_contexts(&cfg(3, 10.0)).unwrap(), synth_contexts(&cfg(3, 10.0)).unwrap());
    }

    #[test]
    fn single_context_shares_centroids() {
        let c = cfg(1, 10.0).centroids();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn zero_separation_makes_contexts_coincide() {
        let c = cfg(3, 0.0).centroids();
        assert_eq!(c[0], c[1]);
        assert_eq!(c[1], c[2]);
        let c = cfg(3, 10.0).centroids();
        assert_ne!(c[0], c[1]);
    }

    #[test]
    fn permuted_labels_across_contexts() {
        // with K* = C = 3 the contexts are label rotations of each other
        let c = cfg(3, 10.0).centroids();
        let base = cfg(3, 0.0).centroids();
        for y in 0..3 {
            let off0: Vec<f64> = c[1][y].iter().zip(&base[0][y]).map(|(a, b)| a - b).collect();
            let y2 = (y + 1) % 3;
            let off1: Vec<f64> = c[0][y2].iter().zip(&base[0][y2]).map(|(a, b)| a - b).collect();
            for (a, b) in off0.iter().zip(&off1) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_args() {
        let mut c = cfg(3, 10.0);
        c.samples_per_client = 0;
        assert!(synth_contexts(&c).is_err());
        let mut c = cfg(3, -1.0);
        c.separation = -1.0;
        assert!(synth_contexts(&c).is_err());
    }
}
