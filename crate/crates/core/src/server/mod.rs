//! Server side of a round: cluster the uploads, rebuild the assignment and
//! aggregate one generalized model per cluster.

mod assignment;
mod heuristic;
mod kmeans;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgpflError, Result};
use crate::params::ParamVector;

pub use assignment::{matmul, Assignment};
pub use heuristic::{complexity_term, heuristic_select_k, write_heuristic_csv, HeuristicResult, HeuristicRow};
pub use kmeans::{kmeans, kmeans_pp_seed, lloyd, nearest, sse, KMeansOptions, LloydResult, Seeding};

/// Clusters the uploads into `k` groups. With `prev` present the cluster
/// indices are aligned to it, so a stable partition keeps stable indices.
pub fn cluster_clients<P: AsRef<[f64]>, R: Rng + ?Sized>(
    uploads: &[P],
    k: usize,
    rng: &mut R,
    prev: Option<&Assignment>,
    opts: &KMeansOptions,
) -> Result<Assignment> {
    let fit = kmeans(uploads, k, rng, opts)?;
    let fresh = Assignment::from_labels(fit.labels, k)?;
    Ok(match prev {
        Some(p) => fresh.aligned_to(p),
        None => fresh,
    })
}

/// `old − α(old − target)`, with `α = 1` returning `target` exactly.
pub fn damp(old: &ParamVector, target: ParamVector, alpha: f64) -> ParamVector {
    if alpha == 1.0 {
        return target;
    }
    let mut out = old.clone();
    for (o, t) in out.iter_mut().zip(target.iter()) {
        *o -= alpha * (*o - t);
    }
    out
}

/// `Ω ← Ω − α(Ω − U·P)`: each generalized model moves toward the mean upload
/// of its cluster.
pub fn aggregate(
    omegas: &[ParamVector],
    uploads: &[ParamVector],
    assignment: &Assignment,
    alpha: f64,
) -> Result<Vec<ParamVector>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(CgpflError::config(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if omegas.len() != assignment.k() || uploads.len() != assignment.n() {
        return Err(CgpflError::config(format!(
            "aggregate: {} models / {} uploads for an assignment with K = {}, N = {}",
            omegas.len(),
            uploads.len(),
            assignment.k(),
            assignment.n()
        )));
    }
    let d = omegas.first().map_or(0, |w| w.dim());
    let mut out = Vec::with_capacity(omegas.len());
    for (k, members) in assignment.clusters().iter().enumerate() {
        let mut mean = ParamVector::zeros(d);
        for &i in members {
            uploads[i].check_dim(d, "upload")?;
            mean.axpy(assignment.weight(i), &uploads[i]);
        }
        let next = damp(&omegas[k], mean, alpha);
        next.check_finite("generalized model")?;
        out.push(next);
    }
    Ok(out)
}

/// Scales `w` into the ball of the given radius if it lies outside.
pub fn project_to_ball(w: &mut ParamVector, radius: f64) {
    let norm = w.norm();
    if norm > radius && norm > 0.0 {
        w.scale(radius / norm);
    }
}

pub(crate) fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(CgpflError::DimensionMismatch {
            what: "weights",
            expected: n,
            found: weights.len(),
        });
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
        return Err(CgpflError::config(format!(
            "weights must be non-negative and sum to 1 (sum = {s})"
        )));
    }
    Ok(())
}

/// `Σ_i w_i · min_k ‖θ_i − ω_k‖²`
pub fn cost<P: AsRef<[f64]>, Q: AsRef<[f64]>>(thetas: &[P], omegas: &[Q], weights: &[f64]) -> Result<f64> {
    check_weights(weights, thetas.len())?;
    if omegas.is_empty() {
        return Err(CgpflError::config("cost needs at least one generalized model"));
    }
    Ok(thetas
        .iter()
        .zip(weights)
        .map(|(t, w)| w * nearest(t.as_ref(), omegas).1)
        .sum())
}

/// `m_i / m`.
pub fn size_weights(sizes: &[usize]) -> Vec<f64> {
    let m: usize = sizes.iter().sum();
    sizes.iter().map(|&s| s as f64 / m as f64).collect()
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// How cluster membership moved between two consecutive assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    /// `Q[j][k] = |C_j^prev ∩ C_k^next| / |C_j^prev|`.
    pub q: Vec<Vec<f64>>,
    pub changed_clients: usize,
    pub rows_sum_to_one: bool,
    pub columns_sum_to_one: bool,
}

impl TransitionRecord {
    /// Whether `Q` satisfies both the row and the column constraint, i.e.
    /// `P_next = P_prev · Q` keeps unit column sums.
    pub fn doubly_stochastic(&self) -> bool {
        self.rows_sum_to_one && self.columns_sum_to_one
    }
}

pub fn transition(prev: &Assignment, next: &Assignment) -> Result<TransitionRecord> {
    if prev.n() != next.n() {
        return Err(CgpflError::config("transition between assignments of different N"));
    }
    let (kp, kn) = (prev.k(), next.k());
    let mut counts = vec![vec![0usize; kn]; kp];
    let mut changed = 0;
    for i in 0..prev.n() {
        let (a, b) = (prev.label(i), next.label(i));
        counts[a][b] += 1;
        if a != b {
            changed += 1;
        }
    }
    let q: Vec<Vec<f64>> = counts
        .iter()
        .zip(prev.clusters())
        .map(|(row, members)| row.iter().map(|&c| c as f64 / members.len() as f64).collect())
        .collect();
    let close = |s: f64| (s - 1.0).abs() <= 1e-12;
    let rows_sum_to_one = q.iter().all(|r| close(r.iter().sum()));
    let columns_sum_to_one = (0..kn).all(|k| close(q.iter().map(|r| r[k]).sum()));
    Ok(TransitionRecord {
        q,
        changed_clients: changed,
        rows_sum_to_one,
        columns_sum_to_one,
    })
}

/// Generalized models plus the current assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub omegas: Vec<ParamVector>,
    pub assignment: Assignment,
    pub round: usize,
    pub prev_assignment: Option<Assignment>,
}

impl ServerState {
    /// `K` copies of `init` and a round-robin initial assignment.
    pub fn new(init: &ParamVector, k: usize, n: usize) -> Result<Self> {
        Ok(ServerState {
            omegas: vec![init.clone(); k],
            assignment: Assignment::round_robin(n, k)?,
            round: 0,
            prev_assignment: None,
        })
    }

    pub fn k(&self) -> usize {
        self.omegas.len()
    }

    /// The generalized model client `i` receives (column `i` of `Ω J`).
    pub fn model_for(&self, client: usize) -> &ParamVector {
        &self.omegas[self.assignment.label(client)]
    }

    /// Installs a new assignment and aggregated models.
    pub fn advance(&mut self, omegas: Vec<ParamVector>, assignment: Assignment) {
        self.prev_assignment = Some(std::mem::replace(&mut self.assignment, assignment));
        self.omegas = omegas;
        self.round += 1;
    }
}
