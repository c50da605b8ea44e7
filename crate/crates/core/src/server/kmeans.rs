//! k-means++ seeding and Lloyd iterations on flat parameter vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgpflError, Result};
use crate::params::sq_dist;

fn d_iters() -> usize {
    100
}
fn d_restarts() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    #[serde(default = "d_iters")]
    pub max_iters: usize,
    /// Stop once no centroid moves by more than this.
    #[serde(default)]
    pub tol: f64,
    /// Independent k-means++ seedings; the lowest final SSE wins.
    #[serde(default = "d_restarts")]
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iters: d_iters(),
            tol: 0.0,
            restarts: d_restarts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seeding {
    /// Index of the point each centroid was copied from.
    pub indices: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// True when fewer than `k` distinct points existed and some centroids
    /// had to be duplicated.
    pub duplicated: bool,
}

/// Standard k-means++: the first centroid uniformly, each further one with
/// probability proportional to its squared distance to the nearest chosen
/// centroid.
pub fn kmeans_pp_seed<P: AsRef<[f64]>, R: Rng + ?Sized>(
    points: &[P],
    k: usize,
    rng: &mut R,
) -> Result<Seeding> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(CgpflError::config(format!(
            "k-means++ needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let first = rng.random_range(0..n);
    let mut indices = vec![first];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p.as_ref(), points[first].as_ref()))
        .collect();
    let mut duplicated = false;
    while indices.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                cum += w;
                if cum > u {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave u just past the last partial sum
            pick.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            if !duplicated {
                log::warn!("k-means++: fewer than {k} distinct points, duplicating centroids");
            }
            duplicated = true;
            rng.random_range(0..n)
        };
        indices.push(next);
        let c = points[next].as_ref();
        for (w, p) in nearest.iter_mut().zip(points) {
            let d = sq_dist(p.as_ref(), c);
            if d < *w {
                *w = d;
            }
        }
    }
    let centroids = indices.iter().map(|&i| points[i].as_ref().to_vec()).collect();
    Ok(Seeding {
        indices,
        centroids,
        duplicated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Within-cluster SSE after each centroid update.
    pub sse_history: Vec<f64>,
    /// Number of empty-cluster repairs performed.
    pub repairs: usize,
}

impl LloydResult {
    pub fn sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest<C: AsRef<[f64]>>(x: &[f64], centroids: &[C]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c.as_ref());
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Within-cluster sum of squared distances.
pub fn sse<P: AsRef<[f64]>>(points: &[P], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p.as_ref(), &centroids[l]))
        .sum()
}

fn means<P: AsRef<[f64]>>(points: &[P], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p.as_ref()) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let inv = 1.0 / c as f64;
        s.iter_mut().for_each(|v| *v *= inv);
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Donor clusters must keep at least one member.
fn repair_empty<P: AsRef<[f64]>>(
    points: &[P],
    labels: &mut [usize],
    centroids: &[Vec<f64>],
) -> usize {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut repairs = 0;
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p.as_ref(), &centroids[labels[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("n >= k guarantees a donor");
        counts[labels[i]] -= 1;
        labels[i] = empty;
        counts[empty] = 1;
        repairs += 1;
    }
    repairs
}

/// Lloyd's algorithm from the given centroids.
///
/// Stops when the labels stop changing, when no centroid moves by more than
/// `tol`, or after `max_iters` iterations. Empty clusters are repaired before
/// each centroid update, so every returned cluster is non-empty.
pub fn lloyd<P: AsRef<[f64]>>(
    points: &[P],
    init_centroids: Vec<Vec<f64>>,
    max_iters: usize,
    tol: f64,
) -> Result<LloydResult> {
    let n = points.len();
    let k = init_centroids.len();
    if max_iters == 0 || !(tol >= 0.0) {
        return Err(CgpflError::config("lloyd needs max_iters >= 1 and tol >= 0"));
    }
    if k == 0 || n < k {
        return Err(CgpflError::config(format!(
            "lloyd needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) || init_centroids.iter().any(|c| c.len() != dim) {
        return Err(CgpflError::DimensionMismatch {
            what: "k-means points",
            expected: dim,
            found: points
                .iter()
                .map(|p| p.as_ref().len())
                .chain(init_centroids.iter().map(Vec::len))
                .find(|&l| l != dim)
                .unwrap_or(dim),
        });
    }
    let mut centroids = init_centroids;
    let mut labels = vec![usize::MAX; n];
    let mut sse_history = Vec::new();
    let mut repairs = 0;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut next: Vec<usize> = points
            .iter()
            .map(|p| nearest(p.as_ref(), &centroids).0)
            .collect();
        repairs += repair_empty(points, &mut next, &centroids);
        let changed = next != labels;
        labels = next;
        let updated = means(points, &labels, k, dim);
        let shift = updated
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        sse_history.push(sse(points, &labels, &centroids));
        if !changed || shift <= tol {
            break;
        }
    }
    Ok(LloydResult {
        labels,
        centroids,
        iterations,
        sse_history,
        repairs,
    })
}

/// k-means++ seeding followed by Lloyd, best of `opts.restarts` tries.
pub fn kmeans<P: AsRef<[f64]>, R: Rng + ?Sized>(
    points: &[P],
    k: usize,
    rng: &mut R,
    opts: &KMeansOptions,
) -> Result<LloydResult> {
    let mut best: Option<LloydResult> = None;
    for _ in 0..opts.restarts.max(1) {
        let seed = kmeans_pp_seed(points, k, rng)?;
        let run = lloyd(points, seed.centroids, opts.max_iters, opts.tol)?;
        if best.as_ref().is_none_or(|b| run.sse() < b.sse()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn seeding_k_equals_n_is_permutation() {
        let p = pts(&[0.0, 3.0, -1.0, 7.5, 2.0]);
        for s in 0..20 {
            let seed = kmeans_pp_seed(&p, 5, &mut stream_rng(s, 0)).unwrap();
            let mut idx = seed.indices.clone();
            idx.sort_unstable();
            assert_eq!(idx, vec![0, 1, 2, 3, 4]);
            assert!(!seed.duplicated);
        }
    }

    #[test]
    fn seeding_k1_is_a_point() {
        let p = pts(&[0.0, 3.0, -1.0]);
        let seed = kmeans_pp_seed(&p, 1, &mut stream_rng(1, 0)).unwrap();
        assert!(p.contains(&seed.centroids[0]));
    }

    #[test]
    fn seeding_duplicates_when_points_coincide() {
        let p = pts(&[1.0, 1.0, 1.0]);
        let seed = kmeans_pp_seed(&p, 3, &mut stream_rng(1, 0)).unwrap();
        assert!(seed.duplicated);
        assert!(seed.centroids.iter().all(|c| c == &vec![1.0]));
    }

    #[test]
    fn lloyd_small_1d() {
        let p = pts(&[0.0, 1.0, 10.0, 11.0]);
        let r = lloyd(&p, vec![vec![0.0], vec![10.0]], 50, 0.0).unwrap();
        assert_eq!(r.labels, vec![0, 0, 1, 1]);
        assert_eq!(r.centroids, vec![vec![0.5], vec![10.5]]);
        assert_eq!(r.sse(), 1.0);
    }

    #[test]
    fn lloyd_identical_points_repairs() {
        let p = pts(&[2.0; 5]);
        let r = lloyd(&p, vec![vec![2.0]; 3], 50, 0.0).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.repairs >= 2);
        for k in 0..3 {
            assert!(r.labels.contains(&k));
        }
        assert_eq!(r.sse(), 0.0);
    }

    #[test]
    fn lloyd_repairs_empty_cluster_from_bad_init() {
        let p = pts(&[0.0, 0.1, 0.2, 5.0]);
        // second centroid far from everything
        let r = lloyd(&p, vec![vec![1.0], vec![100.0]], 50, 0.0).unwrap();
        assert!(r.repairs >= 1);
        assert!(r.labels.contains(&1));
        for w in r.sse_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn rejects_k_above_n() {
        let p = pts(&[0.0]);
        assert!(kmeans_pp_seed(&p, 2, &mut stream_rng(0, 0)).is_err());
        assert!(lloyd(&p, vec![vec![0.0], vec![1.0]], 5, 0.0).is_err());
    }
}
