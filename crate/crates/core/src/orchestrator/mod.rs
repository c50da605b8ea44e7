//! Training loops: CGPFL, CGPFL with heuristic K selection, FedAvg and the
//! single-global proximal baseline.
//!
//! A round of CGPFL:
//!
//! 1. every client receives the generalized model of its cluster;
//! 2. all clients run [`ClientState::local_round`] (possibly in parallel);
//! 3. the server clusters the uploads `ω̃_{i,R}`, aligning labels with the
//!    previous round, and aggregates one model per cluster;
//! 4. metrics are computed on the personalized models.
//!
//! Client work is independent and reduced in client-id order, so results do
//! not depend on thread scheduling.

mod config;
mod metrics;

use std::sync::Arc;

use crate::client::{ClientState, LocalConfig, LocalUpdateReport};
use crate::data::{validate_shards, ClientShard};
use crate::error::{CgpflError, Result};
use crate::model::{self, Classifier, Model, ModelSpec};
use crate::params::ParamVector;
use crate::rng::{stream_rng, SimRng, STREAM_INIT, STREAM_SERVER};
use crate::server::{
    self, aggregate, cluster_clients, damp, heuristic_select_k, project_to_ball, transition,
    Assignment, HeuristicResult, ServerState,
};

pub use config::{
    Algorithm, Hyperparameters, ModelConfig, RunConfig, RunSection, WeightMode,
};
pub use metrics::{
    write_assignments_json, write_metrics_csv, write_per_client_csv, AssignmentRecord,
    RoundMetrics, METRICS_HEADER,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_accuracy: f64,
    pub per_client: Vec<f64>,
}

/// Accuracy of `models[i]` on client `i`'s test split; the mean is
/// unweighted over clients.
pub fn evaluate<C: Classifier>(models: &[C], shards: &[&ClientShard]) -> Result<Evaluation> {
    if models.len() != shards.len() || shards.is_empty() {
        return Err(CgpflError::config("evaluate needs one model per client"));
    }
    let mut per_client = Vec::with_capacity(shards.len());
    for (m, s) in models.iter().zip(shards) {
        let test = &s.test;
        if test.is_empty() {
            return Err(CgpflError::config(format!("client {} has an empty test split", s.client_id)));
        }
        let correct = (0..test.len())
            .filter(|&j| m.predict(test.row(j)) == test.labels[j])
            .count();
        per_client.push(correct as f64 / test.len() as f64);
    }
    let mean_accuracy = per_client.iter().sum::<f64>() / per_client.len() as f64;
    Ok(Evaluation {
        mean_accuracy,
        per_client,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Each client's personalized model.
    Personalized,
    /// The generalized model each client is assigned to.
    Global,
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub history: Vec<AssignmentRecord>,
    pub heuristic: Option<HeuristicResult>,
    pub omegas: Vec<ParamVector>,
    pub thetas: Vec<ParamVector>,
    pub assignment: Assignment,
}

impl RunOutput {
    pub fn k(&self) -> usize {
        self.omegas.len()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.mean_test_accuracy)
    }

    pub fn metrics_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &self.metrics)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// What one call to [`Simulation::step`] did.
#[derive(Debug, Clone)]
pub struct RoundSummary {
    pub round: usize,
    pub metrics: Option<RoundMetrics>,
    pub record: Option<AssignmentRecord>,
}

/// Step-by-step simulator state.
pub struct Simulation {
    cfg: RunConfig,
    spec: ModelSpec,
    local: LocalConfig,
    clients: Vec<ClientState>,
    server: ServerState,
    weights: Vec<f64>,
    server_rng: SimRng,
    round: usize,
    heuristic: Option<HeuristicResult>,
    metrics: Vec<RoundMetrics>,
    history: Vec<AssignmentRecord>,
    warnings: Vec<String>,
}

impl Simulation {
    pub fn new(cfg: &RunConfig, shards: Vec<ClientShard>) -> Result<Self> {
        let (input_dim, num_classes) = validate_shards(&shards)?;
        let n = shards.len();
        if let Some(s) = shards.iter().find(|s| s.test.is_empty()) {
            return Err(CgpflError::config(format!("client {} has an empty test split", s.client_id)));
        }
        let warnings = cfg.validate(n)?;
        for w in &warnings {
            log::warn!("{w}");
        }
        let spec = cfg.model.spec(input_dim, num_classes);
        spec.validate()?;
        let seed = cfg.run.seed;
        let init = spec.init_params(&mut stream_rng(seed, STREAM_INIT));
        let h = &cfg.hyperparameters;
        let k0 = match cfg.run.algorithm {
            Algorithm::Cgpfl => h.k,
            Algorithm::CgpflHeur => h.k_max_for(n),
            Algorithm::Fedavg | Algorithm::SingleGlobal => 1,
        };
        let server = ServerState::new(&init, k0, n)?;
        let clients: Vec<ClientState> = shards
            .into_iter()
            .map(|s| ClientState::new(Arc::new(s), init.clone(), seed))
            .collect();
        let weights = match cfg.run.weights {
            WeightMode::ShardSize => {
                let sizes: Vec<usize> = clients.iter().map(ClientState::num_train).collect();
                server::size_weights(&sizes)
            }
            WeightMode::Uniform => server::uniform_weights(n),
        };
        Ok(Simulation {
            cfg: cfg.clone(),
            spec,
            local: cfg.local_config(n),
            clients,
            server,
            weights,
            server_rng: stream_rng(seed, STREAM_SERVER),
            round: 0,
            heuristic: None,
            metrics: Vec::new(),
            history: Vec::new(),
            warnings,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.cfg.hyperparameters.rounds
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn omegas(&self) -> &[ParamVector] {
        &self.server.omegas
    }

    pub fn assignment(&self) -> &Assignment {
        &self.server.assignment
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn heuristic(&self) -> Option<&HeuristicResult> {
        self.heuristic.as_ref()
    }

    pub fn metrics(&self) -> &[RoundMetrics] {
        &self.metrics
    }

    pub fn history(&self) -> &[AssignmentRecord] {
        &self.history
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn shards(&self) -> Vec<&ClientShard> {
        self.clients.iter().map(|c| c.shard.as_ref()).collect()
    }

    pub fn evaluate(&self, mode: EvalMode) -> Result<Evaluation> {
        let models: Vec<Model<'_>> = (0..self.clients.len())
            .map(|i| Model {
                spec: &self.spec,
                params: match (mode, self.cfg.run.algorithm) {
                    (EvalMode::Global, _) | (_, Algorithm::Fedavg) => self.server.model_for(i),
                    (EvalMode::Personalized, _) => &self.clients[i].theta,
                },
            })
            .collect();
        evaluate(&models, &self.shards())
    }

    fn should_eval(&self, t: usize) -> bool {
        t.is_multiple_of(self.cfg.run.eval_every) || t + 1 == self.cfg.hyperparameters.rounds
    }

    /// Runs one global round.
    pub fn step(&mut self) -> Result<RoundSummary> {
        let t = self.round;
        let clock = self.cfg.run.record_wall_clock.then(std::time::Instant::now);
        let summary = match self.cfg.run.algorithm {
            Algorithm::Cgpfl | Algorithm::CgpflHeur => self.cgpfl_round(t),
            Algorithm::SingleGlobal => self.single_global_round(t),
            Algorithm::Fedavg => self.fedavg_round(t),
        }
        .map_err(|e| e.in_round(t))?;
        let mut summary = summary;
        if let (Some(m), Some(start)) = (summary.metrics.as_mut(), clock) {
            m.wall_ms = start.elapsed().as_millis() as u64;
        }
        if let Some(m) = &summary.metrics {
            self.metrics.push(m.clone());
        }
        if let Some(r) = &summary.record {
            self.history.push(r.clone());
        }
        self.round += 1;
        Ok(summary)
    }

    pub fn run(mut self) -> Result<RunOutput> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            metrics: self.metrics,
            history: self.history,
            heuristic: self.heuristic,
            thetas: self.clients.iter().map(|c| c.theta.clone()).collect(),
            omegas: self.server.omegas,
            assignment: self.server.assignment,
        }
    }

    fn local_rounds(&mut self, assigned: &[ParamVector]) -> Result<Vec<LocalUpdateReport>> {
        let spec = &self.spec;
        let local = &self.local;
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.clients
                .par_iter_mut()
                .zip(assigned.par_iter())
                .map(|(c, w)| c.local_round(spec, w, local))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.clients
                .iter_mut()
                .zip(assigned)
                .map(|(c, w)| c.local_round(spec, w, local))
                .collect()
        }
    }

    fn local_sgd(&mut self, start: &ParamVector) -> Result<Vec<ParamVector>> {
        let spec = &self.spec;
        let h = &self.cfg.hyperparameters;
        let steps = h.local_rounds * h.local_steps;
        let (eta, batch) = (h.eta, self.local.batch_size);
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.clients
                .par_iter_mut()
                .map(|c| c.sgd_from(spec, start, eta, steps, batch))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.clients
                .iter_mut()
                .map(|c| c.sgd_from(spec, start, eta, steps, batch))
                .collect()
        }
    }

    fn mean_train_loss(&self, models: &[&ParamVector]) -> Result<f64> {
        let mut total = 0.0;
        for (c, m) in self.clients.iter().zip(models) {
            total += model::loss(&self.spec, m, &c.train().batch()?)?;
        }
        Ok(total / self.clients.len() as f64)
    }

    fn project(&self, omegas: &mut [ParamVector]) {
        if let Some(r) = self.cfg.run.projection_radius {
            omegas.iter_mut().for_each(|w| project_to_ball(w, r));
        }
    }

    fn cgpfl_round(&mut self, t: usize) -> Result<RoundSummary> {
        let n = self.clients.len();
        let assigned: Vec<ParamVector> = (0..n).map(|i| self.server.model_for(i).clone()).collect();
        let reports = self.local_rounds(&assigned)?;
        let uploads: Vec<ParamVector> = reports.into_iter().map(|r| r.omega_out).collect();

        let h = &self.cfg.hyperparameters;
        let rerun = self.cfg.run.algorithm == Algorithm::CgpflHeur
            && (t == 0 || self.cfg.run.heuristic_every_round);
        let (next, base) = if rerun {
            let d = self.spec.dim();
            let m_total: usize = self.clients.iter().map(ClientState::num_train).sum();
            let result = heuristic_select_k(
                &uploads,
                &self.weights,
                h.k_min,
                h.k_max_for(n),
                h.mu,
                m_total,
                d,
                &mut self.server_rng,
                &self.cfg.clustering,
            )?;
            log::info!("round {t}: heuristic picked K = {}", result.k_hat);
            let k = result.k_hat;
            self.heuristic = Some(result);
            let next = cluster_clients(&uploads, k, &mut self.server_rng, Some(&self.server.assignment), &self.cfg.clustering)?;
            // previous model of each new cluster: mean of what its members received
            let base = if k == self.server.k() {
                self.server.omegas.clone()
            } else {
                next.clusters()
                    .iter()
                    .map(|members| {
                        let mut w = ParamVector::zeros(self.spec.dim());
                        for &i in members {
                            w.axpy(next.weight(i), &assigned[i]);
                        }
                        w
                    })
                    .collect()
            };
            (next, base)
        } else {
            let next = cluster_clients(&uploads, self.server.k(), &mut self.server_rng, Some(&self.server.assignment), &self.cfg.clustering)?;
            (next, self.server.omegas.clone())
        };
        let mut omegas = aggregate(&base, &uploads, &next, h.alpha)?;
        self.project(&mut omegas);
        let tr = transition(&self.server.assignment, &next)?;
        let record = AssignmentRecord::new(t, &next, &tr);

        let metrics = if self.should_eval(t) {
            let prev = &self.server.assignment;
            let scale = 2.0 / n as f64;
            let mut g_sum = 0.0;
            for (k, members) in prev.clusters().iter().enumerate() {
                let mut g = ParamVector::zeros(self.spec.dim());
                for &i in members {
                    let w = scale * prev.weight(i);
                    g.axpy(w, &self.server.omegas[k]);
                    g.axpy(-w, &self.clients[i].theta);
                }
                g_sum += g.norm_sq();
            }
            let thetas: Vec<&ParamVector> = self.clients.iter().map(|c| &c.theta).collect();
            let cost_value = server::cost(&thetas, &omegas, &self.weights)?;
            let mean_train_loss = self.mean_train_loss(&thetas)?;
            let eval = self.evaluate(EvalMode::Personalized)?;
            Some(RoundMetrics {
                round: t,
                mean_test_accuracy: eval.mean_accuracy,
                mean_train_loss,
                grad_norm_sq_avg: g_sum / prev.k() as f64,
                changed_clients: tr.changed_clients,
                cost_value,
                wall_ms: 0,
                per_client_accuracy: eval.per_client,
            })
        } else {
            None
        };
        self.server.advance(omegas, next);
        Ok(RoundSummary {
            round: t,
            metrics,
            record: Some(record),
        })
    }

    /// One shared generalized model and plain averaging of the uploads. With
    /// `K = 1`, CGPFL computes exactly this.
    fn single_global_round(&mut self, t: usize) -> Result<RoundSummary> {
        let n = self.clients.len();
        let omega = self.server.omegas[0].clone();
        let assigned = vec![omega.clone(); n];
        let reports = self.local_rounds(&assigned)?;
        let w = 1.0 / n as f64;
        let mut avg = ParamVector::zeros(omega.dim());
        for r in &reports {
            avg.axpy(w, &r.omega_out);
        }
        let mut next = damp(&omega, avg, self.cfg.hyperparameters.alpha);
        next.check_finite("global model")?;
        if let Some(r) = self.cfg.run.projection_radius {
            project_to_ball(&mut next, r);
        }
        let metrics = if self.should_eval(t) {
            let scale = 2.0 / n as f64;
            let mut g = ParamVector::zeros(omega.dim());
            for c in &self.clients {
                g.axpy(scale * w, &omega);
                g.axpy(-scale * w, &c.theta);
            }
            let thetas: Vec<&ParamVector> = self.clients.iter().map(|c| &c.theta).collect();
            let cost_value = server::cost(&thetas, std::slice::from_ref(&next), &self.weights)?;
            let mean_train_loss = self.mean_train_loss(&thetas)?;
            let eval = self.evaluate(EvalMode::Personalized)?;
            Some(RoundMetrics {
                round: t,
                mean_test_accuracy: eval.mean_accuracy,
                mean_train_loss,
                grad_norm_sq_avg: g.norm_sq(),
                changed_clients: 0,
                cost_value,
                wall_ms: 0,
                per_client_accuracy: eval.per_client,
            })
        } else {
            None
        };
        self.server.omegas[0] = next;
        Ok(RoundSummary {
            round: t,
            metrics,
            record: None,
        })
    }

    fn fedavg_round(&mut self, t: usize) -> Result<RoundSummary> {
        let omega = self.server.omegas[0].clone();
        let grad_norm_sq_avg = if self.should_eval(t) {
            let mut g = ParamVector::zeros(omega.dim());
            for (c, &w) in self.clients.iter().zip(&self.weights) {
                g.axpy(w, &model::grad(&self.spec, &omega, &c.train().batch()?)?);
            }
            g.norm_sq()
        } else {
            0.0
        };
        let locals = self.local_sgd(&omega)?;
        let mut avg = ParamVector::zeros(omega.dim());
        for (u, &w) in locals.iter().zip(&self.weights) {
            avg.axpy(w, u);
        }
        let next = damp(&omega, avg, self.cfg.hyperparameters.alpha);
        next.check_finite("global model")?;
        self.server.omegas[0] = next;
        let metrics = if self.should_eval(t) {
            let global = &self.server.omegas[0];
            let cost_value = locals
                .iter()
                .zip(&self.weights)
                .map(|(u, w)| w * u.dist_sq(global))
                .sum();
            let models = vec![global; self.clients.len()];
            let mean_train_loss = self.mean_train_loss(&models)?;
            let eval = self.evaluate(EvalMode::Global)?;
            Some(RoundMetrics {
                round: t,
                mean_test_accuracy: eval.mean_accuracy,
                mean_train_loss,
                grad_norm_sq_avg,
                changed_clients: 0,
                cost_value,
                wall_ms: 0,
                per_client_accuracy: eval.per_client,
            })
        } else {
            None
        };
        Ok(RoundSummary {
            round: t,
            metrics,
            record: None,
        })
    }
}

/// Loads the configured data and runs the configured algorithm.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let shards = cfg.data.load()?;
    Simulation::new(cfg, shards)?.run()
}

fn with_algorithm(cfg: &RunConfig, algorithm: Algorithm) -> RunConfig {
    let mut c = cfg.clone();
    c.run.algorithm = algorithm;
    c
}

pub fn run_cgpfl(cfg: &RunConfig, shards: Vec<ClientShard>) -> Result<RunOutput> {
    Simulation::new(&with_algorithm(cfg, Algorithm::Cgpfl), shards)?.run()
}

/// Returns the selected `K̂` together with the run.
pub fn run_cgpfl_heur(cfg: &RunConfig, shards: Vec<ClientShard>) -> Result<(usize, RunOutput)> {
    let out = Simulation::new(&with_algorithm(cfg, Algorithm::CgpflHeur), shards)?.run()?;
    let k_hat = out.heuristic.as_ref().map_or(out.k(), |h| h.k_hat);
    Ok((k_hat, out))
}

pub fn run_fedavg(cfg: &RunConfig, shards: Vec<ClientShard>) -> Result<RunOutput> {
    Simulation::new(&with_algorithm(cfg, Algorithm::Fedavg), shards)?.run()
}

pub fn run_single_global(cfg: &RunConfig, shards: Vec<ClientShard>) -> Result<RunOutput> {
    Simulation::new(&with_algorithm(cfg, Algorithm::SingleGlobal), shards)?.run()
}
