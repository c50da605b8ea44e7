//! Choosing the number of generalized models.
//!
//! `e(K) = sqrt(dK/m · ln(e·m/d)) + μ · cost(K)`, where `cost(K)` is the
//! weighted squared distance of every vector to its nearest of `K` k-means
//! centroids. The first term grows with `K`, the second shrinks.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgpflError, Result};

use super::kmeans::{kmeans, KMeansOptions};
use super::{check_weights, cost};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicRow {
    pub k: usize,
    pub complexity: f64,
    /// Unscaled `cost(K)`.
    pub cost: f64,
    /// `complexity + μ · cost`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicResult {
    pub k_hat: usize,
    pub mu: f64,
    pub table: Vec<HeuristicRow>,
}

/// `sqrt(dK/m · ln(e·m/d))`. Errors when `m < d/e`, where the log goes
/// negative.
pub fn complexity_term(d: usize, k: usize, m_total: usize) -> Result<f64> {
    let (d, k, m) = (d as f64, k as f64, m_total as f64);
    if m_total == 0 || d <= 0.0 {
        return Err(CgpflError::config("complexity term needs m > 0 and d > 0"));
    }
    let log_arg = std::f64::consts::E * m / d;
    if log_arg < 1.0 {
        return Err(CgpflError::config(format!(
            "complexity term undefined: m = {m} < d/e = {:.1}; reduce the model dimension or use more training samples",
            d / std::f64::consts::E
        )));
    }
    Ok((d * k / m * log_arg.ln()).sqrt())
}

/// Scores every `K` in `[k_min, k_max]` and returns the minimizer (ties go
/// to the smaller `K`).
#[allow(clippy::too_many_arguments)]
pub fn heuristic_select_k<P: AsRef<[f64]>, R: Rng + ?Sized>(
    vectors: &[P],
    weights: &[f64],
    k_min: usize,
    k_max: usize,
    mu: f64,
    m_total: usize,
    d: usize,
    rng: &mut R,
    opts: &KMeansOptions,
) -> Result<HeuristicResult> {
    let n = vectors.len();
    if k_min == 0 || k_min > k_max || k_max > n {
        return Err(CgpflError::config(format!(
            "K range [{k_min}, {k_max}] must satisfy 1 <= K_min <= K_max <= N = {n}"
        )));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(CgpflError::config("mu must be finite and >= 0"));
    }
    check_weights(weights, n)?;
    let mut table = Vec::with_capacity(k_max - k_min + 1);
    for k in k_min..=k_max {
        let complexity = complexity_term(d, k, m_total)?;
        let fit = kmeans(vectors, k, rng, opts)?;
        let c = cost(vectors, &fit.centroids, weights)?;
        table.push(HeuristicRow {
            k,
            complexity,
            cost: c,
            score: complexity + mu * c,
        });
    }
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.score < table[best].score {
            best = i;
        }
    }
    Ok(HeuristicResult {
        k_hat: table[best].k,
        mu,
        table,
    })
}

/// CSV with header `K,complexity_term,cost_term,e(K)`, where
/// `cost_term = μ · cost` so that the last column is the sum of the two
/// before it.
pub fn write_heuristic_csv<W: Write>(w: W, result: &HeuristicResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| CgpflError::Io(std::io::Error::other(e));
    out.write_record(["K", "complexity_term", "cost_term", "e(K)"])
        .map_err(io)?;
    for row in &result.table {
        out.write_record([
            row.k.to_string(),
            row.complexity.to_string(),
            (result.mu * row.cost).to_string(),
            row.score.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}
