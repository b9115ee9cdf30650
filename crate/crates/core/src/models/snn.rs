use serde::{Deserialize, Serialize};

use super::{dense, record_lif, LifConfig, ModelError, ModelKind, TrunkArch};
use crate::encoding::{Frames, SnnInput};
use crate::numerics::{NodeId, ParamNodes, Tape};

/// Scale of the uniform weight init relative to `1 / sqrt(fan_in)`.
pub(crate) const INIT_GAIN: f64 = 3.0;

/// Spiking trunk: conv1 + LIF -> conv2 + LIF -> fc1 + LIF, then an affine
/// readout of the fc1 spike counts accumulated over all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnModel {
    pub arch: TrunkArch,
    pub lif: LifConfig,
}

/// Spike nodes recorded per LIF layer and step.
#[derive(Debug, Clone)]
pub struct SpikeNodes {
    layers: [Vec<NodeId>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpikes {
    pub name: String,
    pub neurons: usize,
    pub spikes: u64,
    /// Synapses feeding this layer (one pass, all inputs active).
    pub synapses: u64,
}

/// Spiking activity accumulated over one or more examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeStats {
    pub steps: usize,
    pub examples: usize,
    /// Non-zero input elements summed over steps and examples.
    pub input_events: u64,
    pub input_elements: usize,
    /// Whether inputs were events rather than analog current.
    pub input_binary: bool,
    /// Whether the same input frame is presented at every step.
    pub input_constant: bool,
    pub layers: Vec<LayerSpikes>,
    /// Synapses of the readout fed by the last LIF layer.
    pub readout_synapses: u64,
}

impl SpikeStats {
    fn slots(&self, neurons: usize) -> f64 {
        (neurons * self.steps * self.examples) as f64
    }

    /// Fraction of (neuron, step) slots that fired, in [0, 1].
    pub fn rate(&self, layer: usize) -> f64 {
        let l = &self.layers[layer];
        let slots = self.slots(l.neurons);
        if slots == 0.0 {
            0.0
        } else {
            l.spikes as f64 / slots
        }
    }

    pub fn input_rate(&self) -> f64 {
        let slots = self.slots(self.input_elements);
        if slots == 0.0 {
            0.0
        } else {
            self.input_events as f64 / slots
        }
    }

    /// Firing rate over all LIF neurons.
    pub fn mean_rate(&self) -> f64 {
        let spikes: u64 = self.layers.iter().map(|l| l.spikes).sum();
        let neurons: usize = self.layers.iter().map(|l| l.neurons).sum();
        let slots = self.slots(neurons);
        if slots == 0.0 {
            0.0
        } else {
            spikes as f64 / slots
        }
    }

    /// Adds the counts of `other`, which must come from the same network.
    pub fn merge(&mut self, other: &SpikeStats) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        self.examples += other.examples;
        self.input_events += other.input_events;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.spikes += b.spikes;
        }
    }
}

impl SnnModel {
    fn check_input(&self, x: &SnnInput) -> Result<(), ModelError> {
        let expected = [self.arch.in_channels, self.arch.window];
        if x.shape() != expected || x.steps == 0 {
            return Err(ModelError::InputShape {
                model: ModelKind::Snn,
                expected: expected.to_vec(),
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn record(
        &self,
        tape: &mut Tape,
        params: &ParamNodes,
        x: &SnnInput,
    ) -> Result<(NodeId, SpikeNodes), ModelError> {
        self.check_input(x)?;
        let a = &self.arch;
        let w1 = params.get("conv1.weight")?;
        let b1 = params.get("conv1.bias")?;
        let w2 = params.get("conv2.weight")?;
        let b2 = params.get("conv2.bias")?;
        let flat = [a.flat()];

        // A constant frame gives the same conv1 current at every step.
        let constant_current = match &x.frames {
            Frames::Constant(frame) => {
                let input = tape.input(frame.clone());
                Some(tape.conv1d(input, w1, b1, a.conv1_stride)?)
            }
            Frames::PerStep(_) => None,
        };
        let mut v: [Option<NodeId>; 3] = [None; 3];
        let mut spikes: [Vec<NodeId>; 3] = Default::default();
        for t in 0..x.steps {
            let c1 = match constant_current {
                Some(c) => c,
                None => {
                    let input = tape.input(x.frame(t).clone());
                    tape.conv1d(input, w1, b1, a.conv1_stride)?
                }
            };
            let (v1, s1) = record_lif(tape, v[0], c1, &self.lif)?;
            let c2 = tape.conv1d(s1, w2, b2, a.conv2_stride)?;
            let (v2, s2) = record_lif(tape, v[1], c2, &self.lif)?;
            let s2_flat = tape.reshape(s2, &flat)?;
            let c3 = dense(tape, params, "fc1", s2_flat)?;
            let (v3, s3) = record_lif(tape, v[2], c3, &self.lif)?;
            v = [Some(v1), Some(v2), Some(v3)];
            spikes[0].push(s1);
            spikes[1].push(s2);
            spikes[2].push(s3);
        }
        let counts = tape.seq_sum(&spikes[2])?;
        let logits = dense(tape, params, "fc2", counts)?;
        Ok((logits, SpikeNodes { layers: spikes }))
    }

    pub(crate) fn stats(&self, tape: &Tape, nodes: &SpikeNodes, input: &SnnInput) -> SpikeStats {
        let a = &self.arch;
        let macs = a.layer_macs();
        let neurons = [
            a.conv1_channels * a.conv1_len(),
            a.conv2_channels * a.conv2_len().unwrap_or(0),
            a.hidden,
        ];
        let names = ["lif1", "lif2", "lif3"];
        let layers = (0..3)
            .map(|l| LayerSpikes {
                name: names[l].to_string(),
                neurons: neurons[l],
                spikes: nodes.layers[l]
                    .iter()
                    .map(|&id| tape.value(id).data().iter().filter(|&&s| s != 0.0).count() as u64)
                    .sum(),
                synapses: macs[l].1,
            })
            .collect();
        let elements = a.in_channels * a.window;
        SpikeStats {
            steps: input.steps,
            examples: 1,
            input_events: (input.event_rate() * (elements * input.steps) as f64).round() as u64,
            input_elements: elements,
            input_binary: input.binary,
            input_constant: matches!(input.frames, Frames::Constant(_)),
            layers,
            readout_synapses: macs[3].1,
        }
    }
}
