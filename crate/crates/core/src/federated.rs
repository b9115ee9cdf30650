//! Federated training over per-subject clients with FedAvg aggregation.
//!
//! Each client owns the training examples of one subject. The only values
//! that travel between a client and the server implement [`BoundaryPayload`]:
//! the broadcast [`ParameterSet`] and the returned [`ClientUpdate`]. Raw
//! examples have no path across.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{DatasetSplit, LabeledExample};
use crate::encoding::EncoderConfig;
use crate::models::{loss_and_grads, Model, ModelError, PreparedInput, SpikeStats};
use crate::numerics::{sgd_step, Fingerprint, NumericsError, ParameterSet, SpikeMode};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederatedError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("split has no training examples")]
    NoSubjects,
    #[error("subject {0} has no training examples")]
    EmptyClient(String),
    #[error("no updates to aggregate")]
    NoUpdates,
    #[error("update from {client} has sample count 0")]
    ZeroWeight { client: String },
    #[error("round count must be at least 1")]
    NoRounds,
    #[error("invalid training setting: {0}")]
    Setting(String),
}

impl From<FederatedError> for ModelError {
    fn from(e: FederatedError) -> Self {
        match e {
            FederatedError::Model(m) => m,
            other => ModelError::Config(other.to_string()),
        }
    }
}

mod sealed {
    pub trait Sealed {}
}

/// Marker for values allowed to cross the client/server boundary. Sealed:
/// only [`ParameterSet`] and [`ClientUpdate`] implement it.
pub trait BoundaryPayload: sealed::Sealed + Send {}

impl sealed::Sealed for ParameterSet {}
impl BoundaryPayload for ParameterSet {}
impl sealed::Sealed for ClientUpdate {}
impl BoundaryPayload for ClientUpdate {}

/// Hands a payload across the boundary. Every message in [`run_rounds`]
/// passes through here, so the type system limits what can travel.
pub fn transmit<P: BoundaryPayload>(payload: P) -> P {
    payload
}

/// What a client returns after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub params: ParameterSet,
    /// Local training-set size, the FedAvg weight.
    pub n_k: usize,
    /// Mean mini-batch loss over the local epochs.
    pub train_loss: f64,
    /// Fraction of local examples classified correctly during training.
    pub train_accuracy: f64,
}

/// One subject's private training data and its shuffle seed.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: String,
    examples: Vec<LabeledExample>,
    seed: u64,
}

impl ClientState {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_k(&self) -> usize {
        self.examples.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Held by the server for evaluation only.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub test: Vec<LabeledExample>,
}

/// One client per subject, sorted by subject id. The union of the test
/// partitions stays with the server.
pub fn partition_by_subject(
    split: &DatasetSplit,
    seed: u64,
) -> Result<(Vec<ClientState>, ServerState), FederatedError> {
    let mut by_subject: BTreeMap<String, Vec<LabeledExample>> = BTreeMap::new();
    for s in split.subjects() {
        by_subject.insert(s, Vec::new());
    }
    for e in &split.train {
        by_subject.entry(e.subject_id.clone()).or_default().push(e.clone());
    }
    if by_subject.is_empty() {
        return Err(FederatedError::NoSubjects);
    }
    let mut clients = Vec::with_capacity(by_subject.len());
    for (id, examples) in by_subject {
        if examples.is_empty() {
            return Err(FederatedError::EmptyClient(id));
        }
        let client_seed = rng::derive_u64(seed, &["client", &id]);
        clients.push(ClientState {
            id,
            examples,
            seed: client_seed,
        });
    }
    Ok((
        clients,
        ServerState {
            test: split.test.clone(),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 0.01,
            batch: 64,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<(), FederatedError> {
        if self.epochs == 0 || self.batch == 0 || !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(FederatedError::Setting(format!(
                "epochs {} and batch {} must be positive, lr {} finite and non-negative",
                self.epochs, self.batch, self.lr
            )));
        }
        Ok(())
    }
}

/// Visiting order of `n` examples for one epoch.
pub fn epoch_order(n: usize, seed: u64, round: usize, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::substream(seed, &["shuffle", &round.to_string(), &epoch.to_string()]);
    order.shuffle(&mut r);
    order
}

/// Mini-batch SGD over `examples`, shuffled per epoch with [`epoch_order`].
/// Returns the final parameters, the mean batch loss, and the fraction of
/// visited examples classified correctly before their update.
#[allow(clippy::too_many_arguments)]
pub fn sgd_epochs(
    model: &Model,
    params: &ParameterSet,
    examples: &[LabeledExample],
    encoder: &EncoderConfig,
    cfg: &LocalConfig,
    seed: u64,
    round: usize,
) -> Result<(ParameterSet, f64, f64), FederatedError> {
    cfg.validate()?;
    let inputs = prepare_all(model, examples, encoder)?;
    let mut params = params.clone();
    let mut loss = 0.0;
    let mut batches = 0usize;
    let mut correct = 0.0;
    let mut seen = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(examples.len(), seed, round, epoch);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<(&PreparedInput, usize)> =
                chunk.iter().map(|&i| (&inputs[i].0, inputs[i].1)).collect();
            let r = loss_and_grads(model, &params, &batch, SpikeMode::Hard)?;
            params = sgd_step(&params, &r.grads, cfg.lr)?;
            loss += r.loss;
            batches += 1;
            correct += r.accuracy * chunk.len() as f64;
            seen += chunk.len();
        }
    }
    Ok((params, loss / batches.max(1) as f64, correct / seen.max(1) as f64))
}

fn prepare_all(
    model: &Model,
    examples: &[LabeledExample],
    encoder: &EncoderConfig,
) -> Result<Vec<(PreparedInput, usize)>, ModelError> {
    examples
        .iter()
        .map(|e| Ok((model.prepare(&e.window, encoder, &e.key())?, e.label.id())))
        .collect()
}

/// Client side of one round: copy the broadcast parameters, train locally,
/// return the update.
pub fn local_train(
    client: &ClientState,
    global: &ParameterSet,
    model: &Model,
    encoder: &EncoderConfig,
    cfg: &LocalConfig,
    round: usize,
) -> Result<ClientUpdate, FederatedError> {
    let layout = Fingerprint::of_layout(model.layout().iter().map(|(n, s)| (n.as_str(), s.as_slice())));
    global.ensure_layout(layout)?;
    if client.examples.is_empty() {
        return Err(FederatedError::EmptyClient(client.id.clone()));
    }
    let (params, train_loss, train_accuracy) =
        sgd_epochs(model, global, &client.examples, encoder, cfg, client.seed, round)?;
    Ok(ClientUpdate {
        client_id: client.id.clone(),
        params,
        n_k: client.examples.len(),
        train_loss,
        train_accuracy,
    })
}

/// FedAvg weights `n_k / sum(n)` in ascending client-id order.
pub fn fedavg_weights(updates: &[ClientUpdate]) -> Result<Vec<(String, f64)>, FederatedError> {
    if updates.is_empty() {
        return Err(FederatedError::NoUpdates);
    }
    if let Some(u) = updates.iter().find(|u| u.n_k == 0) {
        return Err(FederatedError::ZeroWeight {
            client: u.client_id.clone(),
        });
    }
    let total: usize = updates.iter().map(|u| u.n_k).sum();
    let mut w: Vec<(String, f64)> = updates
        .iter()
        .map(|u| (u.client_id.clone(), u.n_k as f64 / total as f64))
        .collect();
    w.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(w)
}

/// Sample-weighted mean of the update parameters, summed in ascending
/// client-id order whatever order the updates arrive in.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ParameterSet, FederatedError> {
    let weights = fedavg_weights(updates)?;
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    let fp = ordered[0].params.fingerprint();
    for u in &ordered {
        u.params.ensure_layout(fp)?;
    }
    // The first term seeds the sum, so a single update is reproduced bit for bit.
    let mut acc: Vec<f64> = ordered[0]
        .params
        .flat_values()
        .iter()
        .map(|v| weights[0].1 * v)
        .collect();
    for (u, (_, w)) in ordered.iter().zip(&weights).skip(1) {
        for (a, v) in acc.iter_mut().zip(u.params.flat_values()) {
            *a += w * v;
        }
    }
    Ok(ordered[0].params.with_flat_values(&acc)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub spike_stats: Option<SpikeStats>,
}

/// Accuracy and mean cross-entropy on `examples`; spike statistics are
/// accumulated for the spiking model.
pub fn evaluate(
    model: &Model,
    params: &ParameterSet,
    examples: &[LabeledExample],
    encoder: &EncoderConfig,
) -> Result<Evaluation, FederatedError> {
    if examples.is_empty() {
        return Err(FederatedError::Setting("empty evaluation set".into()));
    }
    let mut predictions = Vec::with_capacity(examples.len());
    let mut correct = 0;
    let mut loss = 0.0;
    let mut stats: Option<SpikeStats> = None;
    for e in examples {
        let input = model.prepare(&e.window, encoder, &e.key())?;
        let (logits, s) = model.forward(params, &input)?;
        let pred = logits.argmax();
        let z = logits.data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        loss += max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - z[e.label.id()];
        if pred == e.label.id() {
            correct += 1;
        }
        predictions.push(pred);
        if let Some(s) = s {
            match &mut stats {
                Some(acc) => acc.merge(&s),
                None => stats = Some(s),
            }
        }
    }
    let n = examples.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
        predictions,
        spike_stats: stats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRound {
    pub client_id: String,
    pub loss: f64,
    pub accuracy: f64,
    pub duration_ms: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    /// 1-based.
    pub round: usize,
    pub fingerprint: Fingerprint,
    /// Local training summaries in client-id order.
    pub clients: Vec<ClientRound>,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub duration_ms: u128,
}

#[derive(Debug, Clone)]
pub struct FederatedRun {
    pub rounds: Vec<RoundResult>,
    pub params: ParameterSet,
    pub final_eval: Evaluation,
}

/// Broadcast, parallel local training, aggregation and evaluation, `rounds`
/// times. `on_round` sees each result as soon as it is final.
#[allow(clippy::too_many_arguments)]
pub fn run_rounds(
    clients: &[ClientState],
    server: &ServerState,
    model: &Model,
    initial: ParameterSet,
    encoder: &EncoderConfig,
    local: &LocalConfig,
    rounds: usize,
    mut on_round: impl FnMut(&RoundResult),
) -> Result<FederatedRun, FederatedError> {
    if rounds == 0 {
        return Err(FederatedError::NoRounds);
    }
    local.validate()?;
    let mut global = initial;
    let mut results = Vec::with_capacity(rounds);
    let mut last_eval = None;
    for round in 1..=rounds {
        let start = Instant::now();
        let timed: Vec<(ClientUpdate, u128)> = clients
            .par_iter()
            .map(|c| {
                let t = Instant::now();
                let broadcast = transmit(global.clone());
                let update = local_train(c, &broadcast, model, encoder, local, round).map(transmit)?;
                Ok((update, t.elapsed().as_millis()))
            })
            .collect::<Result<_, FederatedError>>()?;
        let mut summaries: Vec<ClientRound> = timed
            .iter()
            .map(|(u, ms)| ClientRound {
                client_id: u.client_id.clone(),
                loss: u.train_loss,
                accuracy: u.train_accuracy,
                duration_ms: *ms,
            })
            .collect();
        summaries.sort_by(|a, b| a.client_id.cmp(&b.client_id));
        let updates: Vec<ClientUpdate> = timed.into_iter().map(|(u, _)| u).collect();
        global = fedavg_aggregate(&updates)?;
        let eval = evaluate(model, &global, &server.test, encoder)?;
        let result = RoundResult {
            round,
            fingerprint: global.fingerprint(),
            clients: summaries,
            test_accuracy: eval.accuracy,
            test_loss: eval.loss,
            duration_ms: start.elapsed().as_millis(),
        };
        on_round(&result);
        results.push(result);
        last_eval = Some(eval);
    }
    Ok(FederatedRun {
        rounds: results,
        params: global,
        final_eval: last_eval.expect("at least one round"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn update(id: &str, v: Vec<f64>, n: usize) -> ClientUpdate {
        ClientUpdate {
            client_id: id.into(),
            params: ParameterSet::new(vec![("w".into(), Tensor::vector(v).unwrap())]).unwrap(),
            n_k: n,
            train_loss: 0.0,
            train_accuracy: 0.0,
        }
    }

    #[test]
    fn weighted_mean_of_two() {
        let agg = fedavg_aggregate(&[update("a", vec![2.0], 1), update("b", vec![4.0], 3)]).unwrap();
        assert_eq!(agg.get("w").unwrap().data(), &[3.5]);
    }

    #[test]
    fn single_update_is_identity_including_signed_zero() {
        let u = update("a", vec![-0.0, 1e-300, -7.25, f64::MIN_POSITIVE], 17);
        let agg = fedavg_aggregate(std::slice::from_ref(&u)).unwrap();
        assert!(agg.bit_identical(&u.params));
    }

    #[test]
    fn weights_sum_to_one() {
        let w = fedavg_weights(&[update("c", vec![0.0], 7), update("a", vec![0.0], 11), update("b", vec![0.0], 13)]).unwrap();
        let names: Vec<_> = w.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert!((w.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn arrival_order_does_not_matter() {
        let a = update("S001", vec![0.1, 0.7], 5);
        let b = update("S002", vec![0.3, -0.2], 9);
        let c = update("S003", vec![1.1, 0.05], 2);
        let x = fedavg_aggregate(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let y = fedavg_aggregate(&[c, a, b]).unwrap();
        assert!(x.bit_identical(&y));
    }

    #[test]
    fn aggregation_errors() {
        assert_eq!(fedavg_aggregate(&[]).unwrap_err(), FederatedError::NoUpdates);
        assert!(matches!(
            fedavg_aggregate(&[update("a", vec![1.0], 0)]).unwrap_err(),
            FederatedError::ZeroWeight { .. }
        ));
        let other = ClientUpdate {
            params: ParameterSet::new(vec![("v".into(), Tensor::vector(vec![1.0]).unwrap())]).unwrap(),
            ..update("b", vec![], 1)
        };
        assert!(matches!(
            fedavg_aggregate(&[update("a", vec![1.0], 1), other]).unwrap_err(),
            FederatedError::Numerics(NumericsError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let o = epoch_order(50, 3, 1, 0);
        let mut sorted = o.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(o, epoch_order(50, 3, 1, 0));
        assert_ne!(o, epoch_order(50, 3, 2, 0));
    }
}
