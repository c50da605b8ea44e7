use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{CgpflError, Result};
use crate::server::{Assignment, TransitionRecord};

pub const METRICS_HEADER: [&str; 7] = [
    "round",
    "mean_test_accuracy",
    "mean_train_loss",
    "grad_norm_sq_avg",
    "changed_clients",
    "cost_value",
    "wall_ms",
];

/// One evaluated round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_test_accuracy: f64,
    pub mean_train_loss: f64,
    /// `(1/K) Σ_k ‖(2/N)(1/|C_k|) Σ_{i∈C_k} (ω_k − θ_i)‖²` at the models the
    /// round started from.
    pub grad_norm_sq_avg: f64,
    pub changed_clients: usize,
    pub cost_value: f64,
    pub wall_ms: u64,
    pub per_client_accuracy: Vec<f64>,
}

/// Cluster structure produced in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub round: usize,
    pub k: usize,
    pub clusters: Vec<Vec<usize>>,
    pub changed_clients: usize,
    pub q: Vec<Vec<f64>>,
    /// Whether `Q` has unit row and column sums.
    pub q_doubly_stochastic: bool,
}

impl AssignmentRecord {
    pub fn new(round: usize, next: &Assignment, t: &TransitionRecord) -> Self {
        AssignmentRecord {
            round,
            k: next.k(),
            clusters: next.clusters().to_vec(),
            changed_clients: t.changed_clients,
            q: t.q.clone(),
            q_doubly_stochastic: t.doubly_stochastic(),
        }
    }
}

fn csv_err(e: csv::Error) -> CgpflError {
    CgpflError::Io(std::io::Error::other(e))
}

pub fn write_metrics_csv<W: Write>(w: W, metrics: &[RoundMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER).map_err(csv_err)?;
    for m in metrics {
        out.write_record([
            m.round.to_string(),
            m.mean_test_accuracy.to_string(),
            m.mean_train_loss.to_string(),
            m.grad_norm_sq_avg.to_string(),
            m.changed_clients.to_string(),
            m.cost_value.to_string(),
            m.wall_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `round,client_0,client_1,...`
pub fn write_per_client_csv<W: Write>(w: W, metrics: &[RoundMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n = metrics.first().map_or(0, |m| m.per_client_accuracy.len());
    let mut header = vec!["round".to_string()];
    header.extend((0..n).map(|i| format!("client_{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for m in metrics {
        let mut row = vec![m.round.to_string()];
        row.extend(m.per_client_accuracy.iter().map(f64::to_string));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_assignments_json<W: Write>(w: W, history: &[AssignmentRecord]) -> Result<()> {
    serde_json::to_writer_pretty(w, history).map_err(|e| CgpflError::Io(std::io::Error::other(e)))
}
