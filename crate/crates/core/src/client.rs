//! One client's work inside a global round.
//!
//! A local round starts the client's copy `ω̃` of its generalized model at the
//! model the server assigned, then repeats `R` times: run `S` SGD steps on the
//! proximal objective `f_i(θ) + λ/2 ‖θ − ω̃‖²` (the inexact inner solve), then
//! move `ω̃` toward the resulting `θ̃` along `∇_ω G = (2/N)(ω̃ − θ̃)` with step
//! `β`. The personalized model `θ` persists across rounds unless
//! `reset_theta` is set.

use std::sync::Arc;

use rand::seq::index;

use crate::data::{ClientShard, Dataset};
use crate::error::{CgpflError, Result};
use crate::model::{self, Batch, ModelSpec};
use crate::params::ParamVector;
use crate::rng::{client_rng, SimRng};

/// Hyperparameters of one local round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalConfig {
    pub lambda: f64,
    /// Personalized-model learning rate.
    pub eta: f64,
    /// Learning rate of the local generalized-model copy.
    pub beta: f64,
    /// `R`: local updates of `ω̃` per round.
    pub local_rounds: usize,
    /// `S`: SGD steps on `θ` per local update.
    pub local_steps: usize,
    /// `N`: number of clients in the system.
    pub num_clients: usize,
    /// `None` means full-batch gradients.
    pub batch_size: Option<usize>,
    pub reset_theta: bool,
}

impl LocalConfig {
    /// `2β/N`, the fraction of the way `ω̃` moves toward `θ̃` per update.
    pub fn omega_step(&self) -> f64 {
        2.0 * self.beta / self.num_clients as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_rounds == 0 || self.local_steps == 0 {
            return Err(CgpflError::config("R and S must be >= 1"));
        }
        if self.num_clients == 0 {
            return Err(CgpflError::config("N must be >= 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CgpflError::config("lambda must be finite and >= 0"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(CgpflError::config("eta must be finite and >= 0"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(CgpflError::config("beta must be finite and > 0"));
        }
        if self.batch_size == Some(0) {
            return Err(CgpflError::config("batch_size must be >= 1"));
        }
        Ok(())
    }

    /// Step-size ceiling for `β` from the convergence analysis, using
    /// `L_G ≈ 2/N`: `1 / (2 sqrt(R(R+1)) L_G)`.
    pub fn beta_ceiling(&self) -> f64 {
        let r = self.local_rounds as f64;
        let l_g = 2.0 / self.num_clients as f64;
        1.0 / (2.0 * (r * (r + 1.0)).sqrt() * l_g)
    }
}

/// What a client sends back after a local round, plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdateReport {
    pub client_id: usize,
    /// `ω̃_{i,R}`, the upload.
    pub omega_out: ParamVector,
    pub theta_out: ParamVector,
    /// `F_i(θ)` on the full training split at the last `ω̃` used.
    pub final_personalized_loss: f64,
    /// `‖(2/N)(ω̃_{R-1} − θ̃)‖²` of the last local update.
    pub grad_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: Arc<ClientShard>,
    pub theta: ParamVector,
    pub omega_local: ParamVector,
    rng: SimRng,
}

impl ClientState {
    /// Starts `θ` and `ω̃` at `init`; the minibatch stream is derived from
    /// `(seed, client_id)`.
    pub fn new(shard: Arc<ClientShard>, init: ParamVector, seed: u64) -> Self {
        let client_id = shard.client_id;
        ClientState {
            client_id,
            shard,
            theta: init.clone(),
            omega_local: init,
            rng: client_rng(seed, client_id),
        }
    }

    pub fn train(&self) -> &Dataset {
        &self.shard.train
    }

    /// Weight of this client in size-weighted averages.
    pub fn num_train(&self) -> usize {
        self.shard.train.len()
    }

    fn minibatch(&mut self, batch_size: Option<usize>) -> Option<Dataset> {
        let n = self.shard.train.len();
        match batch_size {
            Some(b) if b < n => {
                let idx = index::sample(&mut self.rng, n, b).into_vec();
                Some(self.shard.train.gather(&idx))
            }
            _ => None,
        }
    }

    fn with_batch<T>(
        &mut self,
        batch_size: Option<usize>,
        f: impl FnOnce(&Self, Batch<'_>) -> Result<T>,
    ) -> Result<T> {
        match self.minibatch(batch_size) {
            Some(mb) => f(self, mb.batch()?),
            None => {
                let shard = Arc::clone(&self.shard);
                f(self, shard.train.batch()?)
            }
        }
    }

    /// `S` proximal SGD steps from the current `θ`; returns (and keeps) the
    /// resulting `θ̃`.
    pub fn solve_theta(
        &mut self,
        spec: &ModelSpec,
        omega: &ParamVector,
        lambda: f64,
        eta: f64,
        steps: usize,
        batch_size: Option<usize>,
    ) -> Result<ParamVector> {
        let id = self.client_id;
        for s in 0..steps {
            let g = self
                .with_batch(batch_size, |st, b| {
                    model::personalized_grad(spec, &st.theta, omega, &b, lambda)
                })
                .map_err(|e| e.at(None, Some(id), Some(s)))?;
            self.theta.axpy(-eta, &g);
            self.theta
                .check_finite("personalized model")
                .map_err(|e| e.at(None, Some(id), Some(s)))?;
        }
        Ok(self.theta.clone())
    }

    /// Plain local SGD on `f_i` from `start`, used by FedAvg. The result is
    /// also stored in `θ`.
    pub fn sgd_from(
        &mut self,
        spec: &ModelSpec,
        start: &ParamVector,
        eta: f64,
        steps: usize,
        batch_size: Option<usize>,
    ) -> Result<ParamVector> {
        let id = self.client_id;
        self.theta = start.clone();
        for s in 0..steps {
            let g = self
                .with_batch(batch_size, |st, b| model::grad(spec, &st.theta, &b))
                .map_err(|e| e.at(None, Some(id), Some(s)))?;
            self.theta.axpy(-eta, &g);
            self.theta
                .check_finite("local model")
                .map_err(|e| e.at(None, Some(id), Some(s)))?;
        }
        Ok(self.theta.clone())
    }

    /// Full local round with the SGD inner solver.
    pub fn local_round(
        &mut self,
        spec: &ModelSpec,
        omega_assigned: &ParamVector,
        cfg: &LocalConfig,
    ) -> Result<LocalUpdateReport> {
        if cfg.reset_theta {
            self.theta = omega_assigned.clone();
        }
        let mut report = self.local_round_with(omega_assigned, cfg, |st, omega| {
            st.solve_theta(spec, omega, cfg.lambda, cfg.eta, cfg.local_steps, cfg.batch_size)
        })?;
        report.final_personalized_loss = self.personalized_loss(spec, cfg.lambda)?;
        Ok(report)
    }

    /// Local round with an arbitrary inner solver for `θ̃(ω̃)`.
    ///
    /// `final_personalized_loss` is left at 0; [`ClientState::local_round`]
    /// fills it in.
    pub fn local_round_with<F>(
        &mut self,
        omega_assigned: &ParamVector,
        cfg: &LocalConfig,
        mut solver: F,
    ) -> Result<LocalUpdateReport>
    where
        F: FnMut(&mut ClientState, &ParamVector) -> Result<ParamVector>,
    {
        let step = cfg.omega_step();
        let mut omega = omega_assigned.clone();
        let mut grad_norm_sq = 0.0;
        let mut last_theta = self.theta.clone();
        for _ in 0..cfg.local_rounds {
            let theta_tilde = solver(self, &omega)?;
            let scale = 2.0 / cfg.num_clients as f64;
            grad_norm_sq = scale * scale * omega.dist_sq(&theta_tilde);
            // ω̃ − β(2/N)(ω̃ − θ̃), written as a convex combination
            for (w, t) in omega.iter_mut().zip(theta_tilde.iter()) {
                *w = (1.0 - step) * *w + step * t;
            }
            omega
                .check_finite("local generalized model")
                .map_err(|e| e.at(None, Some(self.client_id), None))?;
            last_theta = theta_tilde;
        }
        self.omega_local = omega.clone();
        Ok(LocalUpdateReport {
            client_id: self.client_id,
            omega_out: omega,
            theta_out: last_theta,
            final_personalized_loss: 0.0,
            grad_norm_sq,
        })
    }

    /// `F_i(θ)` on the full training split against the current `ω̃`.
    pub fn personalized_loss(&self, spec: &ModelSpec, lambda: f64) -> Result<f64> {
        let b = self.shard.train.batch()?;
        model::personalized_objective(spec, &self.theta, &self.omega_local, &b, lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_contexts, SynthConfig};

    fn shard() -> Arc<ClientShard> {
        let shards = synth_contexts(&SynthConfig {
            num_contexts: 1,
            clients_per_context: 1,
            input_dim: 10,
            num_classes: 3,
            samples_per_client: 40,
            separation: 3.0,
            noise_std: 1.0,
            train_fraction: 0.75,
            seed: 5,
        })
        .unwrap();
        Arc::new(shards.into_iter().next().unwrap())
    }

    fn cfg() -> LocalConfig {
        LocalConfig {
            lambda: 12.0,
            eta: 0.005,
            beta: 0.5,
            local_rounds: 3,
            local_steps: 5,
            num_clients: 4,
            batch_size: Some(8),
            reset_theta: false,
        }
    }

    fn spec() -> ModelSpec {
        ModelSpec::mlr(10, 3)
    }

    fn state(seed: u64) -> ClientState {
        let s = spec();
        let init = s.init_params(&mut crate::rng::stream_rng(seed, 99));
        ClientState::new(shard(), init, seed)
    }

    #[test]
    fn zero_learning_rate_leaves_theta() {
        let mut st = state(1);
        let before = st.theta.clone();
        let omega = ParamVector::zeros(spec().dim());
        let out = st.solve_theta(&spec(), &omega, 12.0, 0.0, 10, Some(4)).unwrap();
        assert_eq!(out, before);
    }

    #[test]
    fn full_batch_descent_on_d33() {
        let s = spec();
        assert_eq!(s.dim(), 33);
        let mut st = state(2);
        let omega = s.init_params(&mut crate::rng::stream_rng(3, 3));
        let b = st.shard.train.clone();
        let before = model::personalized_objective(&s, &st.theta, &omega, &b.batch().unwrap(), 12.0).unwrap();
        st.solve_theta(&s, &omega, 12.0, 1e-3, 20, None).unwrap();
        let after = model::personalized_objective(&s, &st.theta, &omega, &b.batch().unwrap(), 12.0).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn huge_lambda_pins_theta_to_omega() {
        let s = spec();
        let mut st = state(4);
        let omega = s.init_params(&mut crate::rng::stream_rng(8, 8));
        let lambda = 1e8;
        let eta = 0.1 / lambda;
        let mut prev = st.theta.dist_sq(&omega).sqrt();
        for _ in 0..200 {
            st.solve_theta(&s, &omega, lambda, eta, 1, None).unwrap();
            let d = st.theta.dist_sq(&omega).sqrt();
            assert!(d <= prev + 1e-12);
            prev = d;
        }
        assert!(prev < 1e-3, "{prev}");
    }

    #[test]
    fn fixed_point_when_solver_returns_omega() {
        let mut st = state(5);
        let w = spec().init_params(&mut crate::rng::stream_rng(1, 1));
        let rep = st.local_round_with(&w, &cfg(), |_, omega| Ok(omega.clone())).unwrap();
        assert_eq!(rep.omega_out, w);
        assert_eq!(rep.grad_norm_sq, 0.0);
    }

    #[test]
    fn single_linear_step_toward_stub() {
        let mut st = state(6);
        let w = ParamVector::from_vec(vec![1.0; 33]);
        let c = ParamVector::from_vec((0..33).map(|i| i as f64 * 0.1).collect());
        let mut one = cfg();
        one.local_rounds = 1;
        let rep = st.local_round_with(&w, &one, |_, _| Ok(c.clone())).unwrap();
        let g = 2.0 * one.beta / 4.0;
        for i in 0..33 {
            let expect = w[i] - g * (w[i] - c[i]);
            assert!((rep.omega_out[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_step_lands_on_stub() {
        let mut st = state(7);
        let w = ParamVector::from_vec(vec![0.1; 33]);
        let c = ParamVector::from_vec((0..33).map(|i| 0.3 - i as f64 * 0.07).collect());
        let mut one = cfg();
        one.local_rounds = 1;
        one.beta = 2.0; // 2β/N = 1
        let rep = st.local_round_with(&w, &one, |_, _| Ok(c.clone())).unwrap();
        assert_eq!(rep.omega_out, c);
    }

    #[test]
    fn contraction_toward_fixed_target() {
        let mut st = state(8);
        let w = spec().init_params(&mut crate::rng::stream_rng(2, 2));
        let c = spec().init_params(&mut crate::rng::stream_rng(3, 2));
        let mut many = cfg();
        many.local_rounds = 1;
        let factor = 1.0 - many.omega_step();
        let mut cur = w;
        for _ in 0..6 {
            let before = cur.dist_sq(&c).sqrt();
            cur = st.local_round_with(&cur, &many, |_, _| Ok(c.clone())).unwrap().omega_out;
            let after = cur.dist_sq(&c).sqrt();
            assert!((after - factor * before).abs() < 1e-12 * before.max(1.0));
        }
    }

    #[test]
    fn deterministic_reports() {
        let w = spec().init_params(&mut crate::rng::stream_rng(1, 1));
        let a = state(9).local_round(&spec(), &w, &cfg()).unwrap();
        let b = state(9).local_round(&spec(), &w, &cfg()).unwrap();
        assert_eq!(a, b);
        assert!(a.final_personalized_loss.is_finite());
    }

    #[test]
    fn divergence_reports_client_and_step() {
        let mut st = state(10);
        let omega = ParamVector::zeros(spec().dim());
        let err = st
            .solve_theta(&spec(), &omega, 1.0, 1e300, 3, None)
            .unwrap_err();
        match err {
            CgpflError::Numerical { context, .. } => {
                assert_eq!(context.client, Some(0));
                assert!(context.step.is_some());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn beta_ceiling_formula() {
        let c = LocalConfig { local_rounds: 10, num_clients: 40, ..cfg() };
        let expect = 1.0 / (2.0 * (110f64).sqrt() * 0.05);
        assert!((c.beta_ceiling() - expect).abs() < 1e-12);
    }
}
