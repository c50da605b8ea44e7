#![allow(dead_code)]

use cgpfl_core::data::{synth_contexts, ClientShard, DataSource, SynthConfig};
use cgpfl_core::orchestrator::RunConfig;

/// Three contexts of four clients each in the plane.
pub fn fixture_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        num_contexts: 3,
        clients_per_context: 4,
        input_dim: 2,
        num_classes: 3,
        samples_per_client: 24,
        separation: 10.0,
        noise_std: 4.0,
        train_fraction: 0.5,
        seed,
    }
}

pub const FIXTURE_MU: f64 = 100.0;

pub fn fixture_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(DataSource::Synthetic(fixture_synth(seed)));
    cfg.run.seed = seed;
    let h = &mut cfg.hyperparameters;
    h.k = 3;
    h.k_min = 1;
    h.k_max = Some(6);
    h.rounds = 50;
    h.local_rounds = 10;
    h.local_steps = 5;
    h.lambda = 20.0;
    h.eta = 0.05;
    h.beta = Some(0.25);
    h.mu = FIXTURE_MU;
    h.batch_size = 32;
    cfg
}

pub fn fixture_shards(seed: u64) -> Vec<ClientShard> {
    synth_contexts(&fixture_synth(seed)).unwrap()
}

/// Ground-truth partition of the fixture clients.
pub fn fixture_contexts() -> Vec<Vec<usize>> {
    vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9, 10, 11]]
}

pub fn same_partition(a: &[Vec<usize>], b: &[Vec<usize>]) -> bool {
    let norm = |p: &[Vec<usize>]| {
        let mut v: Vec<Vec<usize>> = p
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_unstable();
                c
            })
            .collect();
        v.sort();
        v
    };
    norm(a) == norm(b)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = p[j];
            p[j] = orig + h;
            let up = f(&p);
            p[j] = orig - h;
            let down = f(&p);
            p[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_j |a_j − b_j| / max(|a_j|, |b_j|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn sse_of(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            p.iter()
                .zip(&sums[l])
                .map(|(x, s)| (x - s / counts[l] as f64).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Minimum within-cluster SSE over every partition of `points` into exactly
/// `k` non-empty groups.
pub fn brute_force_sse(points: &[Vec<f64>], k: usize) -> f64 {
    fn go(i: usize, used: usize, labels: &mut Vec<usize>, points: &[Vec<f64>], k: usize, best: &mut f64) {
        let n = points.len();
        if n - i < k - used {
            return;
        }
        if i == n {
            let v = sse_of(points, labels, k);
            if v < *best {
                *best = v;
            }
            return;
        }
        // canonical labelling: a point may open at most one new group
        for l in 0..(used + 1).min(k) {
            labels.push(l);
            go(i + 1, used.max(l + 1), labels, points, k, best);
            labels.pop();
        }
    }
    let mut best = f64::INFINITY;
    go(0, 0, &mut Vec::new(), points, k, &mut best);
    best
}

/// Every `k`-subset of `0..n`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}
