use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use cgpfl_core::orchestrator::{
    write_assignments_json, write_metrics_csv, write_per_client_csv, Algorithm, RunConfig, RunOutput, Simulation,
};
use cgpfl_core::server::write_heuristic_csv;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.csv";
pub const PER_CLIENT: &str = "per_client_accuracy.csv";
pub const ASSIGNMENTS: &str = "assignments.json";
pub const HEURISTIC: &str = "heuristic.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_snapshot: RunConfig,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_mean_test_accuracy: Option<f64>,
    pub output_paths: Vec<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::runtime(format!("{}: {e}", path.display()))
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<(), Failure> {
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| io_failure(&path, e))
}

fn write_outputs(dir: &Path, cfg: &RunConfig, out: &RunOutput) -> Result<Vec<String>, Failure> {
    let mut written = Vec::new();
    let core = |e: cgpfl_core::CgpflError| Failure::runtime(e.to_string());
    write_metrics_csv(create(dir, METRICS)?, &out.metrics).map_err(core)?;
    written.push(METRICS.to_string());
    write_per_client_csv(create(dir, PER_CLIENT)?, &out.metrics).map_err(core)?;
    written.push(PER_CLIENT.to_string());
    if matches!(cfg.run.algorithm, Algorithm::Cgpfl | Algorithm::CgpflHeur) {
        write_assignments_json(create(dir, ASSIGNMENTS)?, &out.history).map_err(core)?;
        written.push(ASSIGNMENTS.to_string());
    }
    if let Some(h) = &out.heuristic {
        write_heuristic_csv(create(dir, HEURISTIC)?, h).map_err(core)?;
        written.push(HEURISTIC.to_string());
    }
    Ok(written)
}

/// Runs `cfg` and writes every artifact into `out_dir`. The manifest is
/// written before training starts and rewritten when it ends.
pub fn execute(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest, Failure> {
    fs::create_dir_all(out_dir).map_err(|e| io_failure(out_dir, e))?;
    let mut manifest = RunManifest {
        config_snapshot: cfg.clone(),
        code_version: format!("cgpfl {}", env!("CARGO_PKG_VERSION")),
        started_at: now(),
        finished_at: None,
        status: RunStatus::Running,
        error: None,
        warnings: Vec::new(),
        selected_k: None,
        final_mean_test_accuracy: None,
        output_paths: vec![MANIFEST.to_string()],
    };
    write_manifest(out_dir, &manifest)?;

    let result = train(cfg, &mut manifest).and_then(|out| {
        let written = write_outputs(out_dir, cfg, &out)?;
        Ok((out, written))
    });
    manifest.finished_at = Some(now());
    match result {
        Ok((out, written)) => {
            manifest.status = RunStatus::Completed;
            manifest.selected_k = Some(out.k());
            manifest.final_mean_test_accuracy = out.final_accuracy();
            manifest.output_paths.extend(written);
            write_manifest(out_dir, &manifest)?;
            Ok(manifest)
        }
        Err(f) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(f.message.clone());
            write_manifest(out_dir, &manifest)?;
            Err(f)
        }
    }
}

fn train(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<RunOutput, Failure> {
    let shards = cfg.data.load().map_err(Failure::from_core)?;
    let mut sim = Simulation::new(cfg, shards).map_err(Failure::from_core)?;
    manifest.warnings = sim.warnings().to_vec();
    while !sim.is_done() {
        let summary = sim.step().map_err(Failure::from_core)?;
        if let Some(m) = summary.metrics {
            log::info!(
                "round {:>4}  acc {:.4}  loss {:.4}  changed {}",
                m.round,
                m.mean_test_accuracy,
                m.mean_train_loss,
                m.changed_clients
            );
        }
    }
    Ok(sim.finish())
}
