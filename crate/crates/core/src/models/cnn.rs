use super::{dense, ModelError, ModelKind, TrunkArch};
use crate::numerics::{NodeId, ParamNodes, Tape, Tensor};

/// The spiking trunk with each LIF layer replaced by ReLU and a single pass
/// over the analog window.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub arch: TrunkArch,
}

impl CnnModel {
    pub(crate) fn record(
        &self,
        tape: &mut Tape,
        params: &ParamNodes,
        window: &Tensor,
    ) -> Result<NodeId, ModelError> {
        let a = &self.arch;
        if window.shape() != [a.in_channels, a.window] {
            return Err(ModelError::InputShape {
                model: ModelKind::Cnn,
                expected: vec![a.in_channels, a.window],
                actual: window.shape().to_vec(),
            });
        }
        let x = tape.input(window.clone());
        let c1 = tape.conv1d(x, params.get("conv1.weight")?, params.get("conv1.bias")?, a.conv1_stride)?;
        let h1 = tape.relu(c1)?;
        let c2 = tape.conv1d(h1, params.get("conv2.weight")?, params.get("conv2.bias")?, a.conv2_stride)?;
        let h2 = tape.relu(c2)?;
        let flat = tape.reshape(h2, &[a.flat()])?;
        let z3 = dense(tape, params, "fc1", flat)?;
        let h3 = tape.relu(z3)?;
        Ok(dense(tape, params, "fc2", h3)?)
    }
}
