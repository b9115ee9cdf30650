//! Per-inference energy from operation counts, accuracy, and the weighted
//! system performance (WSP) score.
//!
//! Real-valued arithmetic costs one multiply-accumulate per synapse. Binary
//! spike traffic costs one accumulate per synapse and presynaptic spike, so
//! spiking layers are charged `synapses * T * rate` accumulates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Model, ModelKind, SpikeStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("energy constants must satisfy 0 < e_ac < e_mac (got e_mac {e_mac}, e_ac {e_ac})")]
    Constants { e_mac: f64, e_ac: f64 },
    #[error("{0} model needs spike statistics")]
    MissingSpikeStats(ModelKind),
    #[error("{0} model does not produce spike statistics")]
    UnexpectedSpikeStats(ModelKind),
    #[error("spike statistics do not match the model ({0})")]
    StatsMismatch(String),
    #[error("no methods to compare")]
    NoMethods,
    #[error("method {method}: energy must be positive and finite, got {energy}")]
    Energy { method: String, energy: f64 },
    #[error("method {method}: accuracy {accuracy} outside [0, 1]")]
    Accuracy { method: String, accuracy: f64 },
    #[error("all accuracies are zero")]
    ZeroAccuracy,
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    Length { predictions: usize, labels: usize },
    #[error("no predictions")]
    Empty,
}

/// Energy per operation in joules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyModel {
    pub e_mac: f64,
    pub e_ac: f64,
}

impl Default for EnergyModel {
    /// 45 nm estimates: 4.6 pJ per 32-bit MAC, 0.9 pJ per accumulate.
    fn default() -> Self {
        Self {
            e_mac: 4.6e-12,
            e_ac: 0.9e-12,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let ok = self.e_ac > 0.0 && self.e_ac < self.e_mac && self.e_mac.is_finite();
        if !ok {
            return Err(EnergyError::Constants {
                e_mac: self.e_mac,
                e_ac: self.e_ac,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOps {
    pub name: String,
    pub macs: u64,
    /// Synapses times steps: the accumulate budget if every input spiked.
    pub synaptic_budget: u64,
    /// Presynaptic firing rate applied to the budget; 0 for MAC layers.
    pub rate: f64,
    pub acs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCounts {
    pub kind: ModelKind,
    pub layers: Vec<LayerOps>,
}

impl OpCounts {
    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn total_acs(&self) -> f64 {
        self.layers.iter().map(|l| l.acs).sum()
    }
}

/// Accumulates for a spiking layer: `synapses * steps * rate`.
pub fn synaptic_ops(synapses: u64, steps: usize, rate: f64) -> f64 {
    synapses as f64 * steps as f64 * rate
}

fn mac_layer(name: &str, macs: u64) -> LayerOps {
    LayerOps {
        name: name.to_string(),
        macs,
        synaptic_budget: 0,
        rate: 0.0,
        acs: 0.0,
    }
}

fn ac_layer(name: &str, synapses: u64, steps: usize, rate: f64) -> LayerOps {
    LayerOps {
        name: name.to_string(),
        macs: 0,
        synaptic_budget: synapses * steps as u64,
        rate,
        acs: synaptic_ops(synapses, steps, rate),
    }
}

/// Per-inference operation counts. `stats` must be given for the spiking
/// model (averaged over the examples it covers) and only for it.
///
/// The spiking input layer is charged accumulates when its input is binary
/// events, one MAC pass when the same real frame is presented at every step,
/// and a MAC pass per step otherwise.
pub fn count_ops(model: &Model, stats: Option<&SpikeStats>) -> Result<OpCounts, EnergyError> {
    let kind = model.kind();
    let layers = match (model, stats) {
        (Model::Snn(m), Some(s)) => {
            let macs = m.arch.layer_macs();
            if s.layers.len() != 3 || s.examples == 0 || s.steps == 0 {
                return Err(EnergyError::StatsMismatch(format!(
                    "{} layers over {} examples and {} steps",
                    s.layers.len(),
                    s.examples,
                    s.steps
                )));
            }
            for (l, (name, syn)) in s.layers.iter().zip(&macs) {
                if l.synapses != *syn {
                    return Err(EnergyError::StatsMismatch(format!(
                        "{name} has {syn} synapses, stats say {}",
                        l.synapses
                    )));
                }
            }
            let (n1, syn1) = macs[0];
            let first = if s.input_binary {
                ac_layer(n1, syn1, s.steps, s.input_rate())
            } else if s.input_constant {
                mac_layer(n1, syn1)
            } else {
                mac_layer(n1, syn1 * s.steps as u64)
            };
            vec![
                first,
                ac_layer(macs[1].0, macs[1].1, s.steps, s.rate(0)),
                ac_layer(macs[2].0, macs[2].1, s.steps, s.rate(1)),
                ac_layer(macs[3].0, s.readout_synapses, s.steps, s.rate(2)),
            ]
        }
        (Model::Snn(_), None) => return Err(EnergyError::MissingSpikeStats(kind)),
        (_, Some(_)) => return Err(EnergyError::UnexpectedSpikeStats(kind)),
        (Model::Cnn(m), None) => m
            .arch
            .layer_macs()
            .into_iter()
            .map(|(n, c)| mac_layer(n, c))
            .collect(),
        (Model::Lstm(m), None) => m
            .arch
            .layer_macs()
            .into_iter()
            .map(|(n, c)| mac_layer(&n, c))
            .collect(),
    };
    Ok(OpCounts { kind, layers })
}

/// `sum(MACs) * e_mac + sum(ACs) * e_ac`, in joules.
pub fn estimate_energy(counts: &OpCounts, model: &EnergyModel) -> f64 {
    counts.total_macs() as f64 * model.e_mac + counts.total_acs() * model.e_ac
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, EnergyError> {
    if predictions.len() != labels.len() {
        return Err(EnergyError::Length {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EnergyError::Empty);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub accuracy: f64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WspEntry {
    pub method: String,
    pub accuracy: f64,
    pub energy_j: f64,
    pub wsp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WspReport {
    pub accuracy_weight: f64,
    pub energy_weight: f64,
    pub entries: Vec<WspEntry>,
    /// WSP of the first method over each other method.
    pub ratios: Vec<(String, f64)>,
}

impl WspReport {
    pub fn best(&self) -> &WspEntry {
        self.entries
            .iter()
            .fold(&self.entries[0], |b, e| if e.wsp > b.wsp { e } else { b })
    }
}

/// `0.5 * acc / max(acc) + 0.5 * min(E) / E` for every method.
pub fn compute_wsp(results: &[MethodResult]) -> Result<WspReport, EnergyError> {
    if results.is_empty() {
        return Err(EnergyError::NoMethods);
    }
    for r in results {
        if !(r.energy_j > 0.0 && r.energy_j.is_finite()) {
            return Err(EnergyError::Energy {
                method: r.method.clone(),
                energy: r.energy_j,
            });
        }
        if !(0.0..=1.0).contains(&r.accuracy) {
            return Err(EnergyError::Accuracy {
                method: r.method.clone(),
                accuracy: r.accuracy,
            });
        }
    }
    let max_acc = results.iter().map(|r| r.accuracy).fold(0.0, f64::max);
    if max_acc == 0.0 {
        return Err(EnergyError::ZeroAccuracy);
    }
    let min_e = results.iter().map(|r| r.energy_j).fold(f64::INFINITY, f64::min);
    let (wa, we) = (0.5, 0.5);
    let entries: Vec<WspEntry> = results
        .iter()
        .map(|r| WspEntry {
            method: r.method.clone(),
            accuracy: r.accuracy,
            energy_j: r.energy_j,
            wsp: wa * r.accuracy / max_acc + we * min_e / r.energy_j,
        })
        .collect();
    let ratios = entries[1..]
        .iter()
        .map(|e| (e.method.clone(), entries[0].wsp / e.wsp))
        .collect();
    Ok(WspReport {
        accuracy_weight: wa,
        energy_weight: we,
        entries,
        ratios,
    })
}

/// One method's line in the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: String,
    pub accuracy: f64,
    pub energy_j: f64,
    pub macs: u64,
    pub acs: f64,
    pub wsp: f64,
    /// Energy of this method over the first method's.
    pub energy_ratio: f64,
    pub ops: OpCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Energies are per single inference.
    pub basis: String,
    pub energy_model: EnergyModel,
    pub methods: Vec<MethodRecord>,
    pub wsp: WspReport,
}

/// Energy, WSP and ratios for `(method, accuracy, op counts)` triples; the
/// first triple is the reference for ratios.
pub fn build_report(
    methods: &[(String, f64, OpCounts)],
    energy_model: &EnergyModel,
) -> Result<EnergyReport, EnergyError> {
    energy_model.validate()?;
    let results: Vec<MethodResult> = methods
        .iter()
        .map(|(m, acc, ops)| MethodResult {
            method: m.clone(),
            accuracy: *acc,
            energy_j: estimate_energy(ops, energy_model),
        })
        .collect();
    let wsp = compute_wsp(&results)?;
    let reference = results[0].energy_j;
    let records = methods
        .iter()
        .zip(&results)
        .zip(&wsp.entries)
        .map(|(((m, acc, ops), r), w)| MethodRecord {
            method: m.clone(),
            accuracy: *acc,
            energy_j: r.energy_j,
            macs: ops.total_macs(),
            acs: ops.total_acs(),
            wsp: w.wsp,
            energy_ratio: r.energy_j / reference,
            ops: ops.clone(),
        })
        .collect();
    Ok(EnergyReport {
        basis: "per-inference".into(),
        energy_model: *energy_model,
        methods: records,
        wsp,
    })
}
