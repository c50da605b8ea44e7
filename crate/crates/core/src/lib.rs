//! Personalized federated learning with contextualized generalization.
//!
//! `N` simulated clients each train a personalized model under a proximal pull
//! toward one of `K` server-side generalized models. Every round the server
//! clusters the clients' uploaded parameters with k-means++ / Lloyd, rebuilds
//! the cluster-average matrices and aggregates one generalized model per
//! cluster. FedAvg and a single-global proximal baseline are included for
//! comparison, along with the e(K) heuristic for picking `K`.
//!
//! Module map:
//!
//! * [`model`]: MLR / one-hidden-layer MLP losses and analytic gradients.
//! * [`data`]: IDX ingestion, synthetic multi-context generator, non-IID
//!   partitioning and the shard-dump format.
//! * [`client`]: one client's local round (personalized SGD steps plus local
//!   updates of its copy of the generalized model).
//! * [`server`]: clustering, assignment matrices, aggregation, transitions,
//!   cost and K selection.
//! * [`orchestrator`]: full training loops, evaluation, metrics export.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod client;
pub mod data;
pub mod error;
pub mod model;
pub mod orchestrator;
pub mod params;
pub mod rng;
pub mod server;

pub use error::{CgpflError, Result};
pub use params::ParamVector;
