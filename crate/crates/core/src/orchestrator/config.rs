use serde::{Deserialize, Serialize};

use crate::client::LocalConfig;
use crate::data::DataSource;
use crate::error::{CgpflError, Result};
use crate::model::{ModelKind, ModelSpec, DEFAULT_HIDDEN, DEFAULT_L2};
use crate::server::KMeansOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(alias = "CGPFL")]
    Cgpfl,
    #[serde(alias = "CGPFL_HEUR", alias = "cgpfl-heur")]
    CgpflHeur,
    #[serde(alias = "FEDAVG")]
    Fedavg,
    /// One generalized model shared by everyone, no clustering.
    #[serde(alias = "SINGLE_GLOBAL", alias = "single-global")]
    SingleGlobal,
}

/// Weights `w_i` used by the cost, the heuristic and FedAvg averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `m_i / m` from training-set sizes.
    #[default]
    ShardSize,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "d_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_one")]
    pub eval_every: usize,
    /// Fill `wall_ms` in the metrics. Off by default so metrics files are
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_wall_clock: bool,
    /// Re-start `θ` from the assigned generalized model every round.
    #[serde(default)]
    pub reset_theta: bool,
    #[serde(default)]
    pub weights: WeightMode,
    /// Re-run K selection every round instead of only in round 0.
    #[serde(default)]
    pub heuristic_every_round: bool,
    /// Project every generalized model into a ball of this radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_radius: Option<f64>,
}

fn d_algorithm() -> Algorithm {
    Algorithm::Cgpfl
}
fn d_one() -> usize {
    1
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            algorithm: d_algorithm(),
            seed: 0,
            eval_every: 1,
            record_wall_clock: false,
            reset_theta: false,
            weights: WeightMode::ShardSize,
            heuristic_every_round: false,
            projection_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    #[serde(rename = "K", default = "d_k")]
    pub k: usize,
    #[serde(rename = "K_min", default = "d_one")]
    pub k_min: usize,
    /// Defaults to `N / 2`.
    #[serde(rename = "K_max", default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(rename = "T", default = "d_t")]
    pub rounds: usize,
    #[serde(rename = "R", default = "d_r")]
    pub local_rounds: usize,
    #[serde(rename = "S", default = "d_s")]
    pub local_steps: usize,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_eta")]
    pub eta: f64,
    /// Defaults to `eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_mu")]
    pub mu: f64,
    /// 0 selects full-batch gradients.
    #[serde(default = "d_batch")]
    pub batch_size: usize,
}

fn d_k() -> usize {
    4
}
fn d_t() -> usize {
    200
}
fn d_r() -> usize {
    10
}
fn d_s() -> usize {
    5
}
fn d_lambda() -> f64 {
    12.0
}
fn d_eta() -> f64 {
    0.005
}
fn d_alpha() -> f64 {
    1.0
}
fn d_mu() -> f64 {
    1.0
}
fn d_batch() -> usize {
    32
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            k: d_k(),
            k_min: 1,
            k_max: None,
            rounds: d_t(),
            local_rounds: d_r(),
            local_steps: d_s(),
            lambda: d_lambda(),
            eta: d_eta(),
            beta: None,
            alpha: d_alpha(),
            mu: d_mu(),
            batch_size: d_batch(),
        }
    }
}

impl Hyperparameters {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.eta)
    }

    pub fn k_max_for(&self, n: usize) -> usize {
        self.k_max.unwrap_or((n / 2).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_kind")]
    pub kind: ModelKind,
    #[serde(default = "d_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "d_l2")]
    pub l2_coeff: f64,
    #[serde(default = "d_true")]
    pub bias: bool,
}

fn d_kind() -> ModelKind {
    ModelKind::Mlr
}
fn d_hidden() -> usize {
    DEFAULT_HIDDEN
}
fn d_l2() -> f64 {
    DEFAULT_L2
}
fn d_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: d_kind(),
            hidden_dim: d_hidden(),
            l2_coeff: d_l2(),
            bias: true,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self.kind {
            ModelKind::Mlr => ModelSpec {
                kind: ModelKind::Mlr,
                input_dim,
                hidden_dim: 0,
                num_classes,
                l2_coeff: self.l2_coeff,
                bias: self.bias,
            },
            ModelKind::Mlp1 => ModelSpec {
                kind: ModelKind::Mlp1,
                input_dim,
                hidden_dim: self.hidden_dim,
                num_classes,
                l2_coeff: self.l2_coeff,
                bias: true,
            },
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub clustering: KMeansOptions,
    pub data: DataSource,
}

impl RunConfig {
    pub fn new(data: DataSource) -> Self {
        RunConfig {
            run: RunSection::default(),
            hyperparameters: Hyperparameters::default(),
            model: ModelConfig::default(),
            clustering: KMeansOptions::default(),
            data,
        }
    }

    pub fn local_config(&self, num_clients: usize) -> LocalConfig {
        let h = &self.hyperparameters;
        LocalConfig {
            lambda: h.lambda,
            eta: h.eta,
            beta: h.beta(),
            local_rounds: h.local_rounds,
            local_steps: h.local_steps,
            num_clients,
            batch_size: (h.batch_size > 0).then_some(h.batch_size),
            reset_theta: self.run.reset_theta,
        }
    }

    /// Checks the configuration against a system of `n` clients. Returns
    /// non-fatal warnings.
    pub fn validate(&self, n: usize) -> Result<Vec<String>> {
        let h = &self.hyperparameters;
        let mut warnings = Vec::new();
        if n == 0 {
            return Err(CgpflError::config("no clients"));
        }
        let local = self.local_config(n);
        local.validate()?;
        if !(h.alpha > 0.0 && h.alpha <= 1.0) {
            return Err(CgpflError::config(format!("alpha must lie in (0, 1], got {}", h.alpha)));
        }
        if self.run.eval_every == 0 {
            return Err(CgpflError::config("eval_every must be >= 1"));
        }
        if let Some(r) = self.run.projection_radius {
            if !(r > 0.0) {
                return Err(CgpflError::config("projection_radius must be > 0"));
            }
        }
        match self.run.algorithm {
            Algorithm::Cgpfl => {
                if h.k == 0 || h.k > n {
                    return Err(CgpflError::config(format!("K = {} must lie in [1, N = {n}]", h.k)));
                }
            }
            Algorithm::CgpflHeur => {
                let k_max = h.k_max_for(n);
                if h.k_min == 0 || h.k_min > k_max || k_max > n {
                    return Err(CgpflError::config(format!(
                        "K range [{}, {k_max}] must satisfy 1 <= K_min <= K_max <= N = {n}",
                        h.k_min
                    )));
                }
                if !(h.mu >= 0.0 && h.mu.is_finite()) {
                    return Err(CgpflError::config("mu must be finite and >= 0"));
                }
            }
            Algorithm::Fedavg | Algorithm::SingleGlobal => {}
        }
        let ceiling = local.beta_ceiling();
        if matches!(self.run.algorithm, Algorithm::Cgpfl | Algorithm::CgpflHeur | Algorithm::SingleGlobal)
            && local.beta > ceiling
        {
            warnings.push(format!(
                "beta = {} exceeds the step-size ceiling {ceiling:.4} for R = {}, N = {n}",
                local.beta, local.local_rounds
            ));
        }
        Ok(warnings)
    }
}
