use serde::{Deserialize, Serialize};

use crate::numerics::{NodeId, NumericsError, Tape, Tensor};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResetMode {
    /// `v' = u - threshold * s`.
    #[default]
    Subtract,
    /// `v' = u * (1 - s)`.
    Zero,
}

/// Discrete-time leaky integrate-and-fire dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifConfig {
    pub beta: f64,
    pub threshold: f64,
    pub reset: ResetMode,
    pub slope: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            beta: 0.9,
            threshold: 1.0,
            reset: ResetMode::Subtract,
            slope: 25.0,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.beta > 0.0
            && self.beta < 1.0
            && self.threshold > 0.0
            && self.threshold.is_finite()
            && self.slope > 0.0
            && self.slope.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config(format!(
                "LIF parameters out of range: beta {} (0,1), threshold {} > 0, slope {} > 0",
                self.beta, self.threshold, self.slope
            )))
        }
    }
}

/// One update of a layer of LIF neurons: `u = beta * v + i`,
/// `s = [u >= threshold]`, then the configured reset.
pub fn lif_step(v: &Tensor, i: &Tensor, cfg: &LifConfig) -> Result<(Tensor, Tensor), ModelError> {
    if v.shape() != i.shape() {
        return Err(ModelError::Numerics(NumericsError::ShapeMismatch {
            op: "lif_step",
            lhs: v.shape().to_vec(),
            rhs: i.shape().to_vec(),
        }));
    }
    let mut next = Vec::with_capacity(v.len());
    let mut spikes = Vec::with_capacity(v.len());
    for (&vv, &ii) in v.data().iter().zip(i.data()) {
        let u = cfg.beta * vv + ii;
        let s = if u >= cfg.threshold { 1.0 } else { 0.0 };
        next.push(match cfg.reset {
            ResetMode::Subtract => u - cfg.threshold * s,
            ResetMode::Zero => u * (1.0 - s),
        });
        spikes.push(s);
    }
    Ok((
        Tensor::new(v.shape().to_vec(), next)?,
        Tensor::new(v.shape().to_vec(), spikes)?,
    ))
}

/// Records the same update on a tape. `v = None` is the zero resting state.
/// Returns `(v', spikes)`.
pub(crate) fn record_lif(
    tape: &mut Tape,
    v: Option<NodeId>,
    current: NodeId,
    cfg: &LifConfig,
) -> Result<(NodeId, NodeId), NumericsError> {
    let u = match v {
        Some(v) => {
            let leak = tape.affine(v, cfg.beta, 0.0)?;
            tape.add(leak, current)?
        }
        None => current,
    };
    let s = tape.spike(u, cfg.threshold, cfg.slope)?;
    let next = match cfg.reset {
        ResetMode::Subtract => {
            let drop = tape.affine(s, cfg.threshold, 0.0)?;
            tape.sub(u, drop)?
        }
        ResetMode::Zero => {
            let keep = tape.affine(s, -1.0, 1.0)?;
            tape.mul(u, keep)?
        }
    };
    Ok((next, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(beta: f64, v: f64, i: f64, reset: ResetMode) -> (f64, f64) {
        let cfg = LifConfig {
            beta,
            reset,
            ..LifConfig::default()
        };
        let (v, s) = lif_step(
            &Tensor::vector(vec![v]).unwrap(),
            &Tensor::vector(vec![i]).unwrap(),
            &cfg,
        )
        .unwrap();
        (v.data()[0], s.data()[0])
    }

    #[test]
    fn rest_stays_at_rest() {
        assert_eq!(step(0.9, 0.0, 0.0, ResetMode::Subtract), (0.0, 0.0));
    }

    #[test]
    fn sub_threshold_integration() {
        assert_eq!(step(0.5, 0.8, 0.4, ResetMode::Subtract), (0.8, 0.0));
    }

    #[test]
    fn spike_with_subtractive_reset() {
        // u = 0.5 * 0.8 + 0.7 = 1.1
        let (v, s) = step(0.5, 0.8, 0.7, ResetMode::Subtract);
        assert_eq!(s, 1.0);
        assert!((v - 0.1).abs() < 1e-15, "{v}");
    }

    #[test]
    fn spike_with_zero_reset() {
        assert_eq!(step(0.5, 0.8, 0.7, ResetMode::Zero), (0.0, 1.0));
    }

    #[test]
    fn config_ranges() {
        assert!(LifConfig::default().validate().is_ok());
        assert!(LifConfig { beta: 1.0, ..LifConfig::default() }.validate().is_err());
        assert!(LifConfig { threshold: 0.0, ..LifConfig::default() }.validate().is_err());
    }

    #[test]
    fn tape_update_matches_direct_update() {
        let cfg = LifConfig::default();
        let v0 = Tensor::vector(vec![0.3, 0.95, -0.2]).unwrap();
        let i0 = Tensor::vector(vec![0.5, 0.2, 0.1]).unwrap();
        let (v1, s1) = lif_step(&v0, &i0, &cfg).unwrap();
        let mut tape = Tape::new();
        let v = tape.input(v0);
        let i = tape.input(i0);
        let (tv, ts) = record_lif(&mut tape, Some(v), i, &cfg).unwrap();
        assert_eq!(tape.value(tv), &v1);
        assert_eq!(tape.value(ts), &s1);
    }
}
