use super::{NodeId, NumericsError, ParamNodes, ParameterSet, Tape, Tensor};

/// One stage of a [`Sequential`] network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `W x + b` with parameters `<name>.weight` (`[out, in]`) and `<name>.bias` (`[out]`).
    Affine { name: String, inputs: usize, outputs: usize },
    Relu,
    Sigmoid,
    Tanh,
}

/// Feed-forward stack of dense layers over a 1-D input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn input_size(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Affine { inputs, .. } => Some(*inputs),
            _ => None,
        })
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Affine {
                    name,
                    inputs,
                    outputs,
                } => Some([
                    (format!("{name}.weight"), vec![*outputs, *inputs]),
                    (format!("{name}.bias"), vec![*outputs]),
                ]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn record(
        &self,
        tape: &mut Tape,
        params: &ParamNodes,
        input: NodeId,
    ) -> Result<NodeId, NumericsError> {
        let mut x = input;
        for layer in &self.layers {
            x = match layer {
                Layer::Affine { name, .. } => {
                    let w = params.get(&format!("{name}.weight"))?;
                    let b = params.get(&format!("{name}.bias"))?;
                    let h = tape.matvec(w, x)?;
                    tape.add(h, b)?
                }
                Layer::Relu => tape.relu(x)?,
                Layer::Sigmoid => tape.sigmoid(x)?,
                Layer::Tanh => tape.tanh(x)?,
            };
        }
        Ok(x)
    }
}

/// Records `net` applied to `input` on `tape`, binding `params` first, and
/// returns the output node together with its value.
pub fn forward(
    tape: &mut Tape,
    net: &Sequential,
    params: &ParameterSet,
    input: &Tensor,
) -> Result<(NodeId, Tensor), NumericsError> {
    if let Some(n) = net.input_size() {
        if input.len() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "forward",
                lhs: vec![n],
                rhs: input.shape().to_vec(),
            });
        }
    }
    let nodes = tape.bind(params)?;
    let x = tape.input(input.clone());
    let out = net.record(tape, &nodes, x)?;
    Ok((out, tape.value(out).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_network_returns_input() {
        let net = Sequential::default();
        let params = ParameterSet::new(vec![]).unwrap();
        let x = Tensor::vector(vec![1.5, -2.0]).unwrap();
        let (_, y) = forward(&mut Tape::new(), &net, &params, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn single_affine_layer() {
        let net = Sequential::new(vec![Layer::Affine {
            name: "fc".into(),
            inputs: 1,
            outputs: 1,
        }]);
        let params = ParameterSet::new(vec![
            ("fc.weight".into(), Tensor::matrix(1, 1, vec![2.0]).unwrap()),
            ("fc.bias".into(), Tensor::vector(vec![1.0]).unwrap()),
        ])
        .unwrap();
        let x = Tensor::vector(vec![3.0]).unwrap();
        let (_, y) = forward(&mut Tape::new(), &net, &params, &x).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn wrong_input_size_rejected() {
        let net = Sequential::new(vec![Layer::Affine {
            name: "fc".into(),
            inputs: 3,
            outputs: 1,
        }]);
        let params = ParameterSet::zeros(&net.layout()).unwrap();
        let x = Tensor::vector(vec![1.0]).unwrap();
        assert!(forward(&mut Tape::new(), &net, &params, &x).is_err());
    }
}
