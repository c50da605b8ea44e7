mod common;

use std::sync::Arc;

use cgpfl_core::client::ClientState;
use cgpfl_core::data::{ClientShard, Dataset, DataSource, SynthConfig};
use cgpfl_core::model::{self, Model, ModelSpec};
use cgpfl_core::orchestrator::{evaluate, run_fedavg, Algorithm, RunConfig, Simulation};
use cgpfl_core::rng::stream_rng;
use cgpfl_core::server::{cost, kmeans_pp_seed, transition, Assignment};
use cgpfl_core::ParamVector;
use common::{fixture_config, fixture_shards};

#[test]
fn trained_mlr_separates_two_classes() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let y = i % 2;
        let sign = if y == 0 { -1.0 } else { 1.0 };
        features.push(sign * rng.random_range(0.5..3.0));
        features.push(rng.random_range(-3.0..3.0));
        labels.push(y);
    }
    let ds = Dataset::new(features, labels, 2, 2).unwrap();
    let shard = ClientShard {
        client_id: 0,
        train: ds.gather(&(0..150).collect::<Vec<_>>()),
        test: ds.gather(&(150..200).collect::<Vec<_>>()),
        class_set: [0, 1].into_iter().collect(),
        context: None,
    };
    let spec = ModelSpec::mlr(2, 2);
    let mut st = ClientState::new(Arc::new(shard.clone()), ParamVector::zeros(spec.dim()), 1);
    let start = st.theta.clone();
    let p = st.sgd_from(&spec, &start, 0.5, 500, None).unwrap();
    let acc = evaluate(&[Model { spec: &spec, params: &p }], &[&shard]).unwrap();
    assert!(acc.mean_accuracy >= 0.99, "{}", acc.mean_accuracy);
}

#[test]
fn constant_classifier_scores_class_share() {
    struct Always(usize);
    impl model::Classifier for Always {
        fn predict(&self, _: &[f64]) -> usize {
            self.0
        }
    }
    let labels = vec![0, 0, 0, 1, 2, 2, 2, 2];
    let ds = Dataset::new(vec![0.0; 8], labels, 1, 3).unwrap();
    let shard = ClientShard {
        client_id: 0,
        train: ds.clone(),
        test: ds,
        class_set: [0, 1, 2].into_iter().collect(),
        context: None,
    };
    for (c, share) in [(0, 3.0 / 8.0), (1, 1.0 / 8.0), (2, 0.5)] {
        assert_eq!(evaluate(&[Always(c)], &[&shard]).unwrap().mean_accuracy, share);
    }
}

#[test]
fn k1_matches_single_global_every_round() {
    let mut cfg = fixture_config(4);
    cfg.hyperparameters.k = 1;
    cfg.hyperparameters.rounds = 8;
    let mut a = Simulation::new(&cfg, fixture_shards(4)).unwrap();
    cfg.run.algorithm = Algorithm::SingleGlobal;
    let mut b = Simulation::new(&cfg, fixture_shards(4)).unwrap();
    while !a.is_done() {
        a.step().unwrap();
        b.step().unwrap();
        assert_eq!(a.omegas(), b.omegas());
    }
}

#[test]
fn fedavg_on_one_client_follows_centralized_sgd_losses() {
    let synth = SynthConfig {
        num_contexts: 1,
        clients_per_context: 1,
        input_dim: 3,
        num_classes: 3,
        samples_per_client: 60,
        separation: 3.0,
        noise_std: 1.0,
        train_fraction: 0.75,
        seed: 2,
    };
    let mut cfg = RunConfig::new(DataSource::Synthetic(synth.clone()));
    cfg.run.algorithm = Algorithm::Fedavg;
    cfg.hyperparameters.rounds = 6;
    cfg.hyperparameters.local_rounds = 2;
    cfg.hyperparameters.local_steps = 3;
    cfg.hyperparameters.eta = 0.1;
    cfg.hyperparameters.batch_size = 10;
    let shards = cgpfl_core::data::synth_contexts(&synth).unwrap();
    let out = run_fedavg(&cfg, shards.clone()).unwrap();

    let sim = Simulation::new(&cfg, shards).unwrap();
    let spec = sim.spec().clone();
    let mut client = sim.clients()[0].clone();
    let mut w = sim.omegas()[0].clone();
    for m in &out.metrics {
        w = client.sgd_from(&spec, &w, 0.1, 6, Some(10)).unwrap();
        let loss = model::loss(&spec, &w, &client.train().batch().unwrap()).unwrap();
        assert_eq!(m.mean_train_loss, loss);
    }
}

#[test]
fn seeding_splits_two_blobs() {
    let pts: Vec<Vec<f64>> = [0.0, 0.1, 10.0, 10.1].iter().map(|&x| vec![x]).collect();
    let mut rng = stream_rng(123, 0);
    let hits = (0..1000)
        .filter(|_| {
            let s = kmeans_pp_seed(&pts, 2, &mut rng).unwrap();
            (s.centroids[0][0] < 5.0) != (s.centroids[1][0] < 5.0)
        })
        .count();
    assert!(hits >= 980, "{hits}");
}

#[test]
fn cost_matches_enumeration() {
    let thetas = [vec![0.0, 1.0], vec![2.0, 2.0], vec![-1.0, 0.5]];
    let omegas = [vec![0.0, 0.0], vec![2.0, 1.0]];
    let w = [0.5, 0.25, 0.25];
    let mut want = 0.0;
    for (t, wi) in thetas.iter().zip(w) {
        let d: Vec<f64> = omegas
            .iter()
            .map(|o| o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        want += wi * d.iter().copied().fold(f64::INFINITY, f64::min);
    }
    assert!((cost(&thetas, &omegas, &w).unwrap() - want).abs() < 1e-15);
}

#[test]
fn merge_counts_moved_clients() {
    let prev = Assignment::from_labels(vec![0, 0, 1, 1, 1], 2).unwrap();
    let merged_into_one = Assignment::from_labels(vec![1, 1, 1, 1, 0], 2).unwrap();
    let t = transition(&prev, &merged_into_one).unwrap();
    assert_eq!(t.q[0], vec![0.0, 1.0]);
    assert_eq!(t.changed_clients, 3);
    assert!(!t.doubly_stochastic());
}

#[test]
fn fixture_contexts_are_recovered_early() {
    let cfg = fixture_config(0);
    let out = Simulation::new(&cfg, fixture_shards(0)).unwrap().run().unwrap();
    for rec in &out.history[3..] {
        assert!(common::same_partition(&rec.clusters, &common::fixture_contexts()));
    }
}

#[test]
fn gradient_norm_estimate_decreases_on_fixture() {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    for (k, algorithm) in [(3, Algorithm::Cgpfl), (1, Algorithm::Cgpfl), (1, Algorithm::Fedavg), (3, Algorithm::CgpflHeur)] {
        let mut cfg = fixture_config(1);
        cfg.hyperparameters.k = k;
        cfg.run.algorithm = algorithm;
        let out = Simulation::new(&cfg, fixture_shards(1)).unwrap().run().unwrap();
        let g: Vec<f64> = out.metrics.iter().map(|m| m.grad_norm_sq_avg).collect();
        let n = g.len();
        assert!(mean(&g[n - 10..]) < mean(&g[..10]), "{algorithm:?} K={k}");
    }
}
