//! The three classifiers: a spiking convolutional network, its
//! architecture-matched ReLU counterpart, and a two-layer LSTM.

mod cnn;
mod lif;
mod lstm;
mod snn;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{encode_window, EncoderConfig, EncodingError, SnnInput};
use crate::numerics::{
    GradientSet, NodeId, NumericsError, ParamNodes, ParameterSet, SpikeMode, Tape, Tensor,
};
use crate::rng;

pub use cnn::CnnModel;
pub use lif::{lif_step, LifConfig, ResetMode};
pub use lstm::LstmModel;
pub use snn::{LayerSpikes, SnnModel, SpikeStats};

pub(crate) use lif::record_lif;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("{model} expects input shape {expected:?}, got {actual:?}")]
    InputShape {
        model: ModelKind,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{0} cannot consume this kind of input")]
    InputKind(ModelKind),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Snn,
    Cnn,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Snn, ModelKind::Cnn, ModelKind::Lstm];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Snn => "snn",
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shared convolutional trunk of the spiking and ReLU networks:
/// conv1 -> conv2 -> flatten -> fc1 -> fc2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrunkArch {
    pub in_channels: usize,
    pub window: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub conv2_stride: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for TrunkArch {
    fn default() -> Self {
        Self {
            in_channels: 64,
            window: 640,
            conv1_channels: 32,
            conv1_kernel: 7,
            conv1_stride: 4,
            conv2_channels: 32,
            conv2_kernel: 5,
            conv2_stride: 4,
            hidden: 128,
            classes: 4,
        }
    }
}

fn conv_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (stride > 0 && kernel > 0 && len >= kernel).then(|| (len - kernel) / stride + 1)
}

impl TrunkArch {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            self.in_channels,
            self.conv1_channels,
            self.conv2_channels,
            self.hidden,
            self.classes,
        ]
        .iter()
        .all(|&v| v > 0);
        if !positive || self.conv2_len().is_none() {
            return Err(ModelError::Config(format!(
                "trunk does not fit a window of {}: {self:?}",
                self.window
            )));
        }
        Ok(())
    }

    pub fn conv1_len(&self) -> usize {
        conv_len(self.window, self.conv1_kernel, self.conv1_stride).unwrap_or(0)
    }

    pub fn conv2_len(&self) -> Option<usize> {
        conv_len(
            conv_len(self.window, self.conv1_kernel, self.conv1_stride)?,
            self.conv2_kernel,
            self.conv2_stride,
        )
    }

    pub fn flat(&self) -> usize {
        self.conv2_channels * self.conv2_len().unwrap_or(0)
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            (
                "conv1.weight".into(),
                vec![self.conv1_channels, self.in_channels, self.conv1_kernel],
            ),
            ("conv1.bias".into(), vec![self.conv1_channels]),
            (
                "conv2.weight".into(),
                vec![self.conv2_channels, self.conv1_channels, self.conv2_kernel],
            ),
            ("conv2.bias".into(), vec![self.conv2_channels]),
            ("fc1.weight".into(), vec![self.hidden, self.flat()]),
            ("fc1.bias".into(), vec![self.hidden]),
            ("fc2.weight".into(), vec![self.classes, self.hidden]),
            ("fc2.bias".into(), vec![self.classes]),
        ]
    }

    /// Multiply-accumulates of one pass: `(layer, count)`.
    pub fn layer_macs(&self) -> Vec<(&'static str, u64)> {
        let l1 = self.conv1_len() as u64;
        let l2 = self.conv2_len().unwrap_or(0) as u64;
        vec![
            (
                "conv1",
                l1 * (self.conv1_kernel * self.in_channels * self.conv1_channels) as u64,
            ),
            (
                "conv2",
                l2 * (self.conv2_kernel * self.conv1_channels * self.conv2_channels) as u64,
            ),
            ("fc1", (self.flat() * self.hidden) as u64),
            ("fc2", (self.hidden * self.classes) as u64),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmArch {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub window: usize,
    pub classes: usize,
}

impl Default for LstmArch {
    fn default() -> Self {
        Self {
            input: 64,
            hidden: 64,
            layers: 2,
            window: 640,
            classes: 4,
        }
    }
}

impl LstmArch {
    pub fn validate(&self) -> Result<(), ModelError> {
        if [self.input, self.hidden, self.layers, self.window, self.classes].contains(&0) {
            return Err(ModelError::Config(format!("LSTM sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for l in 0..self.layers {
            let n_in = if l == 0 { self.input } else { self.hidden };
            out.push((format!("lstm{l}.weight"), vec![4 * self.hidden, n_in + self.hidden]));
            out.push((format!("lstm{l}.bias"), vec![4 * self.hidden]));
        }
        out.push(("linear.weight".into(), vec![self.classes, self.hidden]));
        out.push(("linear.bias".into(), vec![self.classes]));
        out
    }

    /// `(layer, count)` over the whole sequence.
    pub fn layer_macs(&self) -> Vec<(String, u64)> {
        let mut out = Vec::new();
        for l in 0..self.layers {
            let n_in = if l == 0 { self.input } else { self.hidden };
            out.push((
                format!("lstm{l}"),
                (4 * (n_in + self.hidden) * self.hidden * self.window) as u64,
            ));
        }
        out.push(("linear".into(), (self.hidden * self.classes) as u64));
        out
    }
}

/// Per-kind input after encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum PreparedInput {
    Spikes(SnnInput),
    Window(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Snn(SnnModel),
    Cnn(CnnModel),
    Lstm(LstmModel),
}

impl Model {
    pub fn new(kind: ModelKind, trunk: TrunkArch, lstm: LstmArch, lif: LifConfig) -> Self {
        match kind {
            ModelKind::Snn => Model::Snn(SnnModel { arch: trunk, lif }),
            ModelKind::Cnn => Model::Cnn(CnnModel { arch: trunk }),
            ModelKind::Lstm => Model::Lstm(LstmModel { arch: lstm }),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Snn(_) => ModelKind::Snn,
            Model::Cnn(_) => ModelKind::Cnn,
            Model::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Model::Snn(m) => {
                m.lif.validate()?;
                m.arch.validate()
            }
            Model::Cnn(m) => m.arch.validate(),
            Model::Lstm(m) => m.arch.validate(),
        }
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Model::Snn(m) => m.arch.layout(),
            Model::Cnn(m) => m.arch.layout(),
            Model::Lstm(m) => m.arch.layout(),
        }
    }

    /// Uniform weights in `+-gain / sqrt(fan_in)`, one named stream per
    /// tensor. Biases start at zero except the LSTM forget gate (1.0). The
    /// readout always uses gain 1; trunk layers use [`Model::trunk_gain`].
    pub fn init_params(&self, seed: u64) -> ParameterSet {
        let trunk_gain = self.trunk_gain();
        let entries = self
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    let mut b = vec![0.0; n];
                    if name.starts_with("lstm") {
                        let h = n / 4;
                        b[h..2 * h].fill(1.0);
                    }
                    b
                } else {
                    let fan_in = if name.starts_with("lstm") {
                        shape[0] / 4
                    } else {
                        shape[1..].iter().product()
                    };
                    let gain = if name.starts_with("fc2") || name.starts_with("linear") {
                        1.0
                    } else {
                        trunk_gain
                    };
                    let bound = gain / (fan_in as f64).sqrt();
                    let mut r = rng::substream(seed, &["init", &name]);
                    (0..n).map(|_| r.random_range(-bound..bound)).collect()
                };
                (name, Tensor::new(shape, data).expect("finite init"))
            })
            .collect();
        ParameterSet::new(entries).expect("layout names are unique")
    }

    /// Init gain of the layers before the readout: large enough for the
    /// spiking layers to fire on delta input, He scaling for ReLU.
    pub fn trunk_gain(&self) -> f64 {
        match self {
            Model::Snn(_) => snn::INIT_GAIN,
            Model::Cnn(_) => 6f64.sqrt(),
            Model::Lstm(_) => 1.0,
        }
    }

    /// Encodes a normalized `[channels, samples]` window for this model.
    pub fn prepare(&self, window: &Tensor, encoder: &EncoderConfig, key: &str) -> Result<PreparedInput, ModelError> {
        let expected = match self {
            Model::Snn(m) => vec![m.arch.in_channels, m.arch.window],
            Model::Cnn(m) => vec![m.arch.in_channels, m.arch.window],
            Model::Lstm(m) => vec![m.arch.input, m.arch.window],
        };
        if window.shape() != expected.as_slice() {
            return Err(ModelError::InputShape {
                model: self.kind(),
                expected,
                actual: window.shape().to_vec(),
            });
        }
        Ok(match self {
            Model::Snn(_) => PreparedInput::Spikes(encode_window(window, encoder, key)?),
            Model::Lstm(_) => {
                // One row per time step.
                let (c, l) = (window.shape()[0], window.shape()[1]);
                let d = window.data();
                let data = (0..l).flat_map(|t| (0..c).map(move |ch| d[ch * l + t])).collect();
                PreparedInput::Window(Tensor::matrix(l, c, data)?)
            }
            Model::Cnn(_) => PreparedInput::Window(window.clone()),
        })
    }

    /// Records the forward pass; returns the logits node and, for the spiking
    /// model, the spike nodes needed for [`SpikeStats`].
    pub fn record(
        &self,
        tape: &mut Tape,
        params: &ParamNodes,
        input: &PreparedInput,
    ) -> Result<(NodeId, Option<snn::SpikeNodes>), ModelError> {
        match (self, input) {
            (Model::Snn(m), PreparedInput::Spikes(x)) => {
                let (logits, nodes) = m.record(tape, params, x)?;
                Ok((logits, Some(nodes)))
            }
            (Model::Cnn(m), PreparedInput::Window(x)) => Ok((m.record(tape, params, x)?, None)),
            (Model::Lstm(m), PreparedInput::Window(x)) => Ok((m.record(tape, params, x)?, None)),
            _ => Err(ModelError::InputKind(self.kind())),
        }
    }

    /// Logits for one example, with spike statistics for the spiking model.
    pub fn forward(
        &self,
        params: &ParameterSet,
        input: &PreparedInput,
    ) -> Result<(Tensor, Option<SpikeStats>), ModelError> {
        let mut tape = Tape::new();
        let nodes = tape.bind(params)?;
        let (logits, spikes) = self.record(&mut tape, &nodes, input)?;
        let stats = match (self, spikes, input) {
            (Model::Snn(m), Some(s), PreparedInput::Spikes(x)) => Some(m.stats(&tape, &s, x)),
            _ => None,
        };
        Ok((tape.value(logits).clone(), stats))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// Mean cross-entropy.
    pub loss: f64,
    /// Gradient of the mean loss.
    pub grads: GradientSet,
    pub accuracy: f64,
}

/// Mean softmax cross-entropy over `batch` and its gradient.
///
/// Examples are processed one tape at a time and their gradients summed in
/// batch order, so the result does not depend on scheduling.
pub fn loss_and_grads(
    model: &Model,
    params: &ParameterSet,
    batch: &[(&PreparedInput, usize)],
    mode: SpikeMode,
) -> Result<BatchResult, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = GradientSet::zeros_like(params);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (input, label) in batch {
        let mut tape = Tape::with_spike_mode(mode);
        let nodes = tape.bind(params)?;
        let (logits, _) = model.record(&mut tape, &nodes, input)?;
        if tape.value(logits).argmax() == *label {
            correct += 1;
        }
        let l = tape.softmax_cross_entropy(logits, *label)?;
        tape.set_loss(l);
        loss += tape.loss_value()?;
        total = total.add_scaled(&tape.backward()?, 1.0)?;
    }
    let n = batch.len() as f64;
    Ok(BatchResult {
        loss: loss / n,
        grads: total.scaled(1.0 / n)?,
        accuracy: correct as f64 / n,
    })
}

/// Mean loss only, for finite-difference checks.
pub fn batch_loss(
    model: &Model,
    params: &ParameterSet,
    batch: &[(&PreparedInput, usize)],
    mode: SpikeMode,
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut loss = 0.0;
    for (input, label) in batch {
        let mut tape = Tape::with_spike_mode(mode);
        let nodes = tape.bind(params)?;
        let (logits, _) = model.record(&mut tape, &nodes, input)?;
        let l = tape.softmax_cross_entropy(logits, *label)?;
        loss += tape.value(l).data()[0];
    }
    Ok(loss / batch.len() as f64)
}

/// `W x + b` on a tape.
pub(crate) fn dense(
    tape: &mut Tape,
    params: &ParamNodes,
    name: &str,
    x: NodeId,
) -> Result<NodeId, NumericsError> {
    let w = params.get(&format!("{name}.weight"))?;
    let b = params.get(&format!("{name}.bias"))?;
    let y = tape.matvec(w, x)?;
    tape.add(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_trunk_shapes() {
        let a = TrunkArch::default();
        assert_eq!(a.conv1_len(), 159);
        assert_eq!(a.conv2_len(), Some(39));
        assert_eq!(a.flat(), 1248);
    }

    #[test]
    fn snn_and_cnn_layouts_match() {
        let a = TrunkArch::default();
        let snn = Model::new(ModelKind::Snn, a, LstmArch::default(), LifConfig::default());
        let cnn = Model::new(ModelKind::Cnn, a, LstmArch::default(), LifConfig::default());
        assert_eq!(snn.layout(), cnn.layout());
        let count = |m: &Model| m.init_params(0).num_elements();
        assert_eq!(count(&snn), count(&cnn));
    }

    #[test]
    fn lstm_layout_and_macs() {
        let a = LstmArch::default();
        assert_eq!(a.layout()[0], ("lstm0.weight".to_string(), vec![256, 128]));
        assert_eq!(a.layer_macs()[0].1, 20_971_520);
        assert_eq!(a.layer_macs()[1].1, 20_971_520);
    }

    #[test]
    fn init_is_seeded() {
        let m = Model::new(ModelKind::Lstm, TrunkArch::default(), LstmArch { window: 4, ..LstmArch::default() }, LifConfig::default());
        assert_eq!(m.init_params(3), m.init_params(3));
        assert_ne!(m.init_params(3), m.init_params(4));
        let b = m.init_params(3);
        let bias = b.get("lstm0.bias").unwrap().data();
        assert_eq!(&bias[64..128], &[1.0; 64]);
        assert_eq!(bias[0], 0.0);
    }

    #[test]
    fn uniform_logits_give_ln4() {
        let arch = TrunkArch {
            in_channels: 2,
            window: 16,
            conv1_channels: 2,
            conv1_kernel: 3,
            conv1_stride: 2,
            conv2_channels: 2,
            conv2_kernel: 3,
            conv2_stride: 2,
            hidden: 3,
            classes: 4,
        };
        let m = Model::new(ModelKind::Cnn, arch, LstmArch::default(), LifConfig::default());
        let p = ParameterSet::zeros(&m.layout()).unwrap();
        let x = m.prepare(&Tensor::zeros(&[2, 16]), &EncoderConfig::default(), "k").unwrap();
        let r = loss_and_grads(&m, &p, &[(&x, 1)], SpikeMode::Hard).unwrap();
        assert!((r.loss - 4f64.ln()).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let m = Model::new(ModelKind::Cnn, TrunkArch::default(), LstmArch::default(), LifConfig::default());
        let p = m.init_params(0);
        assert_eq!(loss_and_grads(&m, &p, &[], SpikeMode::Hard).unwrap_err(), ModelError::EmptyBatch);
    }
}
