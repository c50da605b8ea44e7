use serde::{Deserialize, Serialize};

use crate::error::{CgpflError, Result};

/// A partition of the `N` clients into `K` non-empty clusters.
///
/// Matrix views: `P` (N×K) has `P[i][k] = 1/|C_k|` when client `i` is in
/// cluster `k`, so right-multiplying an upload matrix by `P` averages each
/// cluster. `J` (K×N) is the 0/1 membership matrix that broadcasts cluster
/// models back to clients; `J·P = I_K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<usize>,
    clusters: Vec<Vec<usize>>,
}

impl Assignment {
    pub fn from_labels(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(CgpflError::config("assignment needs k >= 1"));
        }
        let mut clusters = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(CgpflError::config(format!("label {l} out of range for k = {k}")));
            }
            clusters[l].push(i);
        }
        if let Some(e) = clusters.iter().position(Vec::is_empty) {
            return Err(CgpflError::config(format!("cluster {e} is empty")));
        }
        Ok(Assignment { labels, clusters })
    }

    /// Client `i` goes to cluster `i mod k`.
    pub fn round_robin(n: usize, k: usize) -> Result<Self> {
        if n < k {
            return Err(CgpflError::config(format!("need N >= K, got N = {n}, K = {k}")));
        }
        Self::from_labels((0..n).map(|i| i % k).collect(), k)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn label(&self, client: usize) -> usize {
        self.labels[client]
    }

    /// `P[i][label(i)]`.
    pub fn weight(&self, client: usize) -> f64 {
        1.0 / self.clusters[self.labels[client]].len() as f64
    }

    pub fn p_matrix(&self) -> Vec<Vec<f64>> {
        let mut p = vec![vec![0.0; self.k()]; self.n()];
        for (i, row) in p.iter_mut().enumerate() {
            row[self.labels[i]] = self.weight(i);
        }
        p
    }

    pub fn j_matrix(&self) -> Vec<Vec<f64>> {
        let mut j = vec![vec![0.0; self.n()]; self.k()];
        for (i, &l) in self.labels.iter().enumerate() {
            j[l][i] = 1.0;
        }
        j
    }

    /// Same partition as `self`, relabeled to agree with `prev` as much as
    /// possible. Cluster pairs are matched greedily by largest overlap
    /// (ties: lowest previous index, then lowest new index); leftover new
    /// clusters take the unused indices in ascending order.
    pub fn aligned_to(&self, prev: &Assignment) -> Assignment {
        let k = self.k();
        if prev.n() != self.n() {
            return self.clone();
        }
        let kp = prev.k().min(k);
        let mut overlap = vec![vec![0usize; kp]; k];
        for (i, &l) in self.labels.iter().enumerate() {
            let old = prev.labels[i];
            if old < kp {
                overlap[l][old] += 1;
            }
        }
        let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
        for (new, row) in overlap.iter().enumerate() {
            for (old, &c) in row.iter().enumerate() {
                if c > 0 {
                    pairs.push((c, old, new));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut map = vec![usize::MAX; k];
        let mut used = vec![false; k];
        for (_, old, new) in pairs {
            if map[new] == usize::MAX && !used[old] {
                map[new] = old;
                used[old] = true;
            }
        }
        let mut free = (0..k).filter(|&l| !used[l]);
        for m in map.iter_mut() {
            if *m == usize::MAX {
                *m = free.next().expect("as many labels as clusters");
            }
        }
        let labels = self.labels.iter().map(|&l| map[l]).collect();
        Assignment::from_labels(labels, k).expect("relabeling preserves non-empty clusters")
    }
}

/// Dense product, summed in index order.
pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}
