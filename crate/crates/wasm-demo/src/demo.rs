//! The demo's operations as plain Rust over JSON strings, so they can be
//! tested natively.

use cgpfl_core::data::{synth_contexts, DataSource, SynthConfig};
use cgpfl_core::orchestrator::{Algorithm, RunConfig, Simulation};
use cgpfl_core::server::HeuristicRow;
use serde::{Deserialize, Serialize};

/// Scenario shared by all operations. Every field has a default, so `{}` is
/// a valid request.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub num_contexts: usize,
    pub clients_per_context: usize,
    pub num_classes: usize,
    pub samples_per_client: usize,
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub k: usize,
    pub k_max: usize,
    pub rounds: usize,
    pub lambda: f64,
    pub eta: f64,
    pub beta: f64,
    pub mu: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            num_contexts: 3,
            clients_per_context: 4,
            num_classes: 3,
            samples_per_client: 24,
            separation: 10.0,
            noise_std: 4.0,
            seed: 0,
            algorithm: Algorithm::Cgpfl,
            k: 3,
            k_max: 6,
            rounds: 30,
            lambda: 20.0,
            eta: 0.05,
            beta: 0.25,
            mu: 100.0,
        }
    }
}

impl Scenario {
    fn synth(&self) -> SynthConfig {
        SynthConfig {
            num_contexts: self.num_contexts,
            clients_per_context: self.clients_per_context,
            input_dim: 2,
            num_classes: self.num_classes,
            samples_per_client: self.samples_per_client,
            separation: self.separation,
            noise_std: self.noise_std,
            train_fraction: 0.5,
            seed: self.seed,
        }
    }

    fn config(&self) -> RunConfig {
        let mut c = RunConfig::new(DataSource::Synthetic(self.synth()));
        c.run.algorithm = self.algorithm;
        c.run.seed = self.seed;
        let h = &mut c.hyperparameters;
        h.k = self.k;
        h.k_max = Some(self.k_max.min(self.synth().num_clients()));
        h.rounds = self.rounds;
        h.lambda = self.lambda;
        h.eta = self.eta;
        h.beta = Some(self.beta);
        h.mu = self.mu;
        c
    }

    fn simulation(&self) -> Result<Simulation, String> {
        let shards = synth_contexts(&self.synth()).map_err(|e| e.to_string())?;
        Simulation::new(&self.config(), shards).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Serialize)]
pub struct RoundPoint {
    pub round: usize,
    pub accuracy: f64,
    pub train_loss: f64,
    pub changed_clients: usize,
}

#[derive(Debug, Serialize)]
pub struct SimulateResponse {
    pub k: usize,
    pub rounds: Vec<RoundPoint>,
    /// Final cluster of each client.
    pub cluster_of: Vec<usize>,
    /// Ground-truth context of each client.
    pub context_of: Vec<usize>,
    pub final_accuracy: Option<f64>,
    pub per_client_accuracy: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct HeuristicResponse {
    pub k_hat: usize,
    pub mu: f64,
    pub rows: Vec<HeuristicRow>,
}

#[derive(Debug, Serialize)]
pub struct PointsResponse {
    pub num_classes: usize,
    /// `[x, y, label, context]` for every training sample.
    pub points: Vec<[f64; 4]>,
}

fn parse(json: &str) -> Result<Scenario, String> {
    let json = if json.trim().is_empty() { "{}" } else { json };
    serde_json::from_str(json).map_err(|e| format!("bad request: {e}"))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn simulate(s: &Scenario) -> Result<SimulateResponse, String> {
    let sim = s.simulation()?;
    let context_of = sim
        .clients()
        .iter()
        .map(|c| c.shard.context.unwrap_or(0))
        .collect();
    let out = sim.run().map_err(|e| e.to_string())?;
    Ok(SimulateResponse {
        k: out.k(),
        rounds: out
            .metrics
            .iter()
            .map(|m| RoundPoint {
                round: m.round,
                accuracy: m.mean_test_accuracy,
                train_loss: m.mean_train_loss,
                changed_clients: m.changed_clients,
            })
            .collect(),
        cluster_of: out.assignment.labels().to_vec(),
        context_of,
        final_accuracy: out.final_accuracy(),
        per_client_accuracy: out.metrics.last().map(|m| m.per_client_accuracy.clone()).unwrap_or_default(),
    })
}

/// Runs the first round of CGPFL-Heur and returns the `e(K)` table.
pub fn heuristic(s: &Scenario) -> Result<HeuristicResponse, String> {
    let mut s = s.clone();
    s.algorithm = Algorithm::CgpflHeur;
    s.rounds = s.rounds.max(1);
    let mut sim = s.simulation()?;
    sim.step().map_err(|e| e.to_string())?;
    let h = sim.heuristic().ok_or("heuristic did not run")?;
    Ok(HeuristicResponse {
        k_hat: h.k_hat,
        mu: h.mu,
        rows: h.table.clone(),
    })
}

pub fn points(s: &Scenario) -> Result<PointsResponse, String> {
    let shards = synth_contexts(&s.synth()).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    for sh in &shards {
        let ctx = sh.context.unwrap_or(0) as f64;
        for i in 0..sh.train.len() {
            let r = sh.train.row(i);
            points.push([r[0], r[1], sh.train.labels[i] as f64, ctx]);
        }
    }
    Ok(PointsResponse {
        num_classes: s.num_classes,
        points,
    })
}

pub fn simulate_json(json: &str) -> Result<String, String> {
    to_json(&simulate(&parse(json)?)?)
}

pub fn heuristic_json(json: &str) -> Result<String, String> {
    to_json(&heuristic(&parse(json)?)?)
}

pub fn points_json(json: &str) -> Result<String, String> {
    to_json(&points(&parse(json)?)?)
}
