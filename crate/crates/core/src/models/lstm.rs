use super::{dense, LstmArch, ModelError, ModelKind};
use crate::numerics::{NodeId, ParamNodes, Tape, Tensor};

/// Stacked LSTM layers over the time axis, then a linear map from the last
/// hidden state to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub arch: LstmArch,
}

impl LstmModel {
    /// `sequence` is `[time, channels]`.
    pub(crate) fn record(
        &self,
        tape: &mut Tape,
        params: &ParamNodes,
        sequence: &Tensor,
    ) -> Result<NodeId, ModelError> {
        let a = &self.arch;
        if sequence.shape() != [a.window, a.input] {
            return Err(ModelError::InputShape {
                model: ModelKind::Lstm,
                expected: vec![a.window, a.input],
                actual: sequence.shape().to_vec(),
            });
        }
        let mut h = tape.input(sequence.clone());
        for l in 0..a.layers {
            let w = params.get(&format!("lstm{l}.weight"))?;
            let b = params.get(&format!("lstm{l}.bias"))?;
            h = tape.lstm(h, w, b)?;
        }
        let last = tape.slice(h, (a.window - 1) * a.hidden, a.hidden)?;
        Ok(dense(tape, params, "linear", last)?)
    }
}
