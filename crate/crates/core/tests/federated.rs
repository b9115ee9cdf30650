mod common;

use common::{tiny_model, tiny_split};
use spikefed::encoding::EncoderConfig;
use spikefed::federated::*;
use spikefed::models::{batch_loss, loss_and_grads, ModelKind};
use spikefed::numerics::{sgd_step, SpikeMode};

fn encoder() -> EncoderConfig {
    EncoderConfig {
        delta_threshold: 0.3,
        ..EncoderConfig::default()
    }
}

fn small_batches() -> LocalConfig {
    LocalConfig {
        batch: 5,
        ..LocalConfig::default()
    }
}

#[test]
fn zero_learning_rate_returns_global_params() {
    for kind in ModelKind::ALL {
        let model = tiny_model(kind);
        let (clients, _) = partition_by_subject(&tiny_split(&["S001", "S002"], 3, 1), 5).unwrap();
        let global = model.init_params(3);
        let cfg = LocalConfig { lr: 0.0, ..small_batches() };
        let update = local_train(&clients[0], &global, &model, &encoder(), &cfg, 1).unwrap();
        assert!(update.params.bit_identical(&global), "{kind}");
        assert_eq!(update.n_k, 12);
    }
}

#[test]
fn single_client_round_matches_centralized_sgd() {
    for kind in [ModelKind::Snn, ModelKind::Cnn] {
        let model = tiny_model(kind);
        let split = tiny_split(&["S004"], 4, 2);
        let (clients, server) = partition_by_subject(&split, 11).unwrap();
        let init = model.init_params(8);
        let cfg = small_batches();

        // Straight-line SGD over the same examples in the same seeded order.
        let prepared: Vec<_> = split
            .train
            .iter()
            .map(|e| (model.prepare(&e.window, &encoder(), &e.key()).unwrap(), e.label.id()))
            .collect();
        let mut params = init.clone();
        for chunk in epoch_order(prepared.len(), clients[0].seed(), 1, 0).chunks(cfg.batch) {
            let batch: Vec<_> = chunk.iter().map(|&i| (&prepared[i].0, prepared[i].1)).collect();
            let r = loss_and_grads(&model, &params, &batch, SpikeMode::Hard).unwrap();
            params = sgd_step(&params, &r.grads, cfg.lr).unwrap();
        }

        let run = run_rounds(&clients, &server, &model, init, &encoder(), &cfg, 1, |_| {}).unwrap();
        assert!(run.params.bit_identical(&params), "{kind}");
    }
}

#[test]
fn identical_clients_average_to_one_client() {
    let model = tiny_model(ModelKind::Cnn);
    let global = model.init_params(1);
    let split = tiny_split(&["S001"], 3, 4);
    let (clients, _) = partition_by_subject(&split, 2).unwrap();
    let one = local_train(&clients[0], &global, &model, &encoder(), &small_batches(), 1).unwrap();
    let copies: Vec<ClientUpdate> = (0..3)
        .map(|i| ClientUpdate {
            client_id: format!("S00{}", i + 1),
            ..one.clone()
        })
        .collect();
    let avg = fedavg_aggregate(&copies).unwrap();
    assert!(avg.max_abs_diff(&one.params).unwrap() <= 1e-12);
}

#[test]
fn aggregation_ignores_execution_order() {
    let model = tiny_model(ModelKind::Snn);
    let global = model.init_params(1);
    let split = tiny_split(&["S001", "S002", "S003"], 2, 6);
    let (clients, _) = partition_by_subject(&split, 3).unwrap();
    let updates: Vec<ClientUpdate> = clients
        .iter()
        .rev()
        .map(|c| local_train(c, &global, &model, &encoder(), &small_batches(), 1).unwrap())
        .collect();
    let forward = fedavg_aggregate(&updates).unwrap();
    let mut shuffled = updates.clone();
    shuffled.rotate_left(1);
    assert!(fedavg_aggregate(&shuffled).unwrap().bit_identical(&forward));
    let weights = fedavg_weights(&updates).unwrap();
    assert!((weights.iter().map(|w| w.1).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn one_round_without_learning_keeps_initial_accuracy() {
    let model = tiny_model(ModelKind::Lstm);
    let split = tiny_split(&["S001", "S002"], 2, 9);
    let (clients, server) = partition_by_subject(&split, 1).unwrap();
    let init = model.init_params(2);
    let cfg = LocalConfig { lr: 0.0, ..small_batches() };
    let run = run_rounds(&clients, &server, &model, init.clone(), &encoder(), &cfg, 1, |_| {}).unwrap();
    assert!(run.params.bit_identical(&init));
    let before = evaluate(&model, &init, &server.test, &encoder()).unwrap();
    assert_eq!(run.rounds[0].test_accuracy, before.accuracy);
    assert_eq!(run.rounds[0].clients.len(), 2);
}

#[test]
fn one_local_epoch_usually_lowers_local_loss() {
    for kind in [ModelKind::Snn, ModelKind::Cnn] {
        let model = tiny_model(kind);
        let mut improved = 0;
        let runs = 20;
        for seed in 0..runs {
            let split = tiny_split(&["S001"], 6, 100 + seed);
            let (clients, _) = partition_by_subject(&split, seed).unwrap();
            let global = model.init_params(seed);
            let prepared: Vec<_> = split
                .train
                .iter()
                .map(|e| (model.prepare(&e.window, &encoder(), &e.key()).unwrap(), e.label.id()))
                .collect();
            let batch: Vec<_> = prepared.iter().map(|(x, y)| (x, *y)).collect();
            let before = batch_loss(&model, &global, &batch, SpikeMode::Hard).unwrap();
            let update = local_train(&clients[0], &global, &model, &encoder(), &small_batches(), 1).unwrap();
            let after = batch_loss(&model, &update.params, &batch, SpikeMode::Hard).unwrap();
            if after <= before {
                improved += 1;
            }
        }
        assert!(improved * 10 >= runs * 9, "{kind}: {improved}/{runs}");
    }
}

#[test]
fn partition_keeps_subjects_apart() {
    let split = tiny_split(&["S002", "S001", "S003"], 2, 3);
    let (clients, server) = partition_by_subject(&split, 0).unwrap();
    let ids: Vec<&str> = clients.iter().map(|c| c.id()).collect();
    assert_eq!(ids, ["S001", "S002", "S003"]);
    assert!(clients.iter().all(|c| c.n_k() == 8));
    assert_eq!(server.test.len(), 12);
    assert_ne!(clients[0].seed(), clients[1].seed());
}

#[test]
fn layout_mismatch_is_rejected() {
    let split = tiny_split(&["S001"], 2, 3);
    let (clients, _) = partition_by_subject(&split, 0).unwrap();
    let wrong = tiny_model(ModelKind::Cnn).init_params(0);
    let err = local_train(&clients[0], &wrong, &tiny_model(ModelKind::Lstm), &encoder(), &small_batches(), 1)
        .unwrap_err();
    assert!(matches!(err, FederatedError::Numerics(_)));
}
