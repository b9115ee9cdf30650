//! Conversion of normalized EEG windows into spiking-network inputs.
//!
//! Three schemes are available:
//! - direct current: the analog window is injected unchanged at each of `T`
//!   steps and the first LIF layer produces the spikes;
//! - rate: Bernoulli spikes with probability equal to the min-max scaled value;
//! - delta: ON/OFF events whenever the signal moves one threshold away from a
//!   tracking reference.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("time steps must be at least 1, got {0}")]
    Steps(usize),
    #[error("delta threshold must be positive and finite, got {0}")]
    Threshold(f64),
    #[error("expected a [channels, samples] window, got shape {0:?}")]
    WindowShape(Vec<usize>),
    #[error("spike tensor values must be 0 or 1")]
    NotBinary,
    #[error("spike tensor shape {shape:?} does not match {len} values")]
    Length { shape: [usize; 3], len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderScheme {
    DirectCurrent,
    Rate,
    #[default]
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub scheme: EncoderScheme,
    pub steps: usize,
    pub delta_threshold: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            scheme: EncoderScheme::default(),
            steps: 8,
            delta_threshold: 1.0,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncodingError> {
        if self.steps < 1 {
            return Err(EncodingError::Steps(self.steps));
        }
        if !(self.delta_threshold > 0.0 && self.delta_threshold.is_finite()) {
            return Err(EncodingError::Threshold(self.delta_threshold));
        }
        Ok(())
    }

    /// Whether the network receives binary spikes rather than analog current.
    pub fn is_spiking(&self) -> bool {
        !matches!(self.scheme, EncoderScheme::DirectCurrent)
    }
}

/// Binary array indexed `(step, channel, position)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTensor {
    shape: [usize; 3],
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn new(shape: [usize; 3], data: Vec<u8>) -> Result<Self, EncodingError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(EncodingError::Length {
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(EncodingError::NotBinary);
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn steps(&self) -> usize {
        self.shape[0]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, step: usize, channel: usize, position: usize) -> u8 {
        let [_, c, p] = self.shape;
        self.data[(step * c + channel) * p + position]
    }

    pub fn spike_count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Spikes per element; zero for an empty tensor.
    pub fn firing_rate(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.spike_count() as f64 / self.data.len() as f64
        }
    }

    /// One step as a `[channels, positions]` tensor of 0.0/1.0.
    pub fn step_tensor(&self, step: usize) -> Tensor {
        let [_, c, p] = self.shape;
        let plane = &self.data[step * c * p..(step + 1) * c * p];
        Tensor::new(vec![c, p], plane.iter().map(|&v| f64::from(v)).collect())
            .expect("binary values are finite")
    }
}

/// ON and OFF event planes from delta modulation, each shaped
/// `(1, channels, samples)` with the sample index on the position axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaSpikes {
    pub on: SpikeTensor,
    pub off: SpikeTensor,
}

impl DeltaSpikes {
    pub fn spike_count(&self) -> usize {
        self.on.spike_count() + self.off.spike_count()
    }

    /// `on - off` as a `[channels, samples]` tensor with values in {-1, 0, 1}.
    pub fn signed(&self) -> Tensor {
        let [_, c, p] = self.on.shape();
        let data = self
            .on
            .data()
            .iter()
            .zip(self.off.data())
            .map(|(&a, &b)| f64::from(a) - f64::from(b))
            .collect();
        Tensor::new(vec![c, p], data).expect("finite")
    }
}

/// What a spiking network receives at each of its steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Frames {
    /// One tensor presented at every step.
    Constant(Tensor),
    PerStep(Vec<Tensor>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnInput {
    pub frames: Frames,
    pub steps: usize,
    /// Whether frames hold events (0 or +-1) rather than analog current.
    pub binary: bool,
}

impl SnnInput {
    pub fn frame(&self, step: usize) -> &Tensor {
        match &self.frames {
            Frames::Constant(t) => t,
            Frames::PerStep(ts) => &ts[step],
        }
    }

    /// `[channels, positions]` of one frame.
    pub fn shape(&self) -> &[usize] {
        self.frame(0).shape()
    }

    /// Fraction of non-zero frame elements, averaged over steps.
    pub fn event_rate(&self) -> f64 {
        let nonzero = |t: &Tensor| t.data().iter().filter(|v| **v != 0.0).count();
        let elements = self.frame(0).len() * self.steps;
        if elements == 0 {
            return 0.0;
        }
        let events = match &self.frames {
            Frames::Constant(t) => nonzero(t) * self.steps,
            Frames::PerStep(ts) => ts.iter().map(nonzero).sum(),
        };
        events as f64 / elements as f64
    }
}

/// Encodes one normalized window for the spiking network.
///
/// Direct current presents the window itself at every step. Delta presents
/// the signed event raster `on - off` at every step. Rate draws fresh
/// Bernoulli spikes per step from a stream keyed by `cfg.seed` and `key`.
pub fn encode_window(window: &Tensor, cfg: &EncoderConfig, key: &str) -> Result<SnnInput, EncodingError> {
    cfg.validate()?;
    window_dims(window)?;
    let (frames, binary) = match cfg.scheme {
        EncoderScheme::DirectCurrent => (Frames::Constant(window.clone()), false),
        EncoderScheme::Delta => (
            Frames::Constant(encode_delta(window, cfg.delta_threshold)?.signed()),
            true,
        ),
        EncoderScheme::Rate => {
            let seed = rng::derive_u64(cfg.seed, &["rate-window", key]);
            let spikes = encode_rate(window, cfg.steps, seed)?;
            (
                Frames::PerStep((0..cfg.steps).map(|t| spikes.step_tensor(t)).collect()),
                true,
            )
        }
    };
    Ok(SnnInput {
        frames,
        steps: cfg.steps,
        binary,
    })
}

fn window_dims(window: &Tensor) -> Result<(usize, usize), EncodingError> {
    match window.shape() {
        [c, l] => Ok((*c, *l)),
        other => Err(EncodingError::WindowShape(other.to_vec())),
    }
}

/// The window repeated as input current for each of `steps` steps.
pub fn encode_direct(window: &Tensor, steps: usize) -> Result<Vec<Tensor>, EncodingError> {
    if steps < 1 {
        return Err(EncodingError::Steps(steps));
    }
    window_dims(window)?;
    Ok(vec![window.clone(); steps])
}

/// Bernoulli rate coding after min-max scaling the window to [0, 1].
pub fn encode_rate(window: &Tensor, steps: usize, seed: u64) -> Result<SpikeTensor, EncodingError> {
    if steps < 1 {
        return Err(EncodingError::Steps(steps));
    }
    let (c, l) = window_dims(window)?;
    let (lo, hi) = window
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let probs: Vec<f64> = window
        .data()
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    let mut rng = rng::substream(seed, &["rate-encoder"]);
    let mut data = Vec::with_capacity(steps * probs.len());
    for _ in 0..steps {
        for &p in &probs {
            data.push(u8::from(rng.random::<f64>() < p));
        }
    }
    SpikeTensor::new([steps, c, l], data)
}

/// Delta modulation along the sample axis of each channel.
///
/// The reference starts at the first sample. At each sample, an ON event is
/// emitted (and the reference raised by `threshold`) when the signal is at
/// least `threshold` above it; otherwise an OFF event (reference lowered) when
/// at least `threshold` below. At most one event per sample.
pub fn encode_delta(window: &Tensor, threshold: f64) -> Result<DeltaSpikes, EncodingError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(EncodingError::Threshold(threshold));
    }
    let (c, l) = window_dims(window)?;
    let mut on = vec![0u8; c * l];
    let mut off = vec![0u8; c * l];
    for ch in 0..c {
        let signal = &window.data()[ch * l..(ch + 1) * l];
        let Some(&first) = signal.first() else { continue };
        let mut reference = first;
        for (i, &x) in signal.iter().enumerate() {
            if x - reference >= threshold {
                on[ch * l + i] = 1;
                reference += threshold;
            } else if reference - x >= threshold {
                off[ch * l + i] = 1;
                reference -= threshold;
            }
        }
    }
    Ok(DeltaSpikes {
        on: SpikeTensor::new([1, c, l], on)?,
        off: SpikeTensor::new([1, c, l], off)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(values: &[f64]) -> Tensor {
        Tensor::matrix(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn direct_repeats_window() {
        let w = Tensor::matrix(2, 2, vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        assert_eq!(encode_direct(&w, 1).unwrap(), vec![w.clone()]);
        assert_eq!(encode_direct(&w, 4).unwrap(), vec![w.clone(); 4]);
        assert_eq!(encode_direct(&w, 0).unwrap_err(), EncodingError::Steps(0));
    }

    #[test]
    fn rate_extremes() {
        let w = row(&[0.0, 1.0]);
        let s = encode_rate(&w, 50, 3).unwrap();
        for t in 0..50 {
            assert_eq!(s.get(t, 0, 0), 0);
            assert_eq!(s.get(t, 0, 1), 1);
        }
    }

    #[test]
    fn rate_half_probability_converges() {
        let w = row(&[0.0, 0.5, 1.0]);
        let s = encode_rate(&w, 10_000, 11).unwrap();
        let fired: usize = (0..10_000).map(|t| s.get(t, 0, 1) as usize).sum();
        let rate = fired as f64 / 10_000.0;
        assert!((rate - 0.5).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn rate_same_seed_identical() {
        let w = row(&[0.1, 0.7, 0.3, 0.9]);
        assert_eq!(encode_rate(&w, 20, 5).unwrap(), encode_rate(&w, 20, 5).unwrap());
        assert_ne!(encode_rate(&w, 20, 5).unwrap(), encode_rate(&w, 20, 6).unwrap());
    }

    #[test]
    fn delta_constant_signal_is_silent() {
        let s = encode_delta(&row(&[0.4; 16]), 0.1).unwrap();
        assert_eq!(s.spike_count(), 0);
    }

    #[test]
    fn delta_hand_simulated_trace() {
        let s = encode_delta(&row(&[0.0, 0.3, 0.1, 0.5]), 0.15).unwrap();
        assert_eq!(s.on.data(), &[0, 1, 0, 1]);
        assert_eq!(s.off.data(), &[0, 0, 0, 0]);
    }

    // With one event per sample and a reference that moves by exactly one
    // threshold, a larger threshold can leave the reference closer to a
    // rebound and so emit more events. Monotonicity holds only for monotone
    // signals (see the property below).
    #[test]
    fn delta_count_can_grow_with_threshold_on_rebounds() {
        let w = row(&[0.0, -1.5, -1.5, -0.75]);
        assert_eq!(encode_delta(&w, 0.5).unwrap().spike_count(), 2);
        assert_eq!(encode_delta(&w, 0.75).unwrap().spike_count(), 3);
    }

    #[test]
    fn delta_rejects_bad_threshold() {
        assert!(encode_delta(&row(&[0.0]), 0.0).is_err());
        assert!(encode_delta(&row(&[0.0]), f64::NAN).is_err());
    }

    #[test]
    fn window_encodings() {
        let w = Tensor::matrix(2, 4, vec![0.0, 0.3, 0.1, 0.5, 0.0, -0.3, -0.1, -0.5]).unwrap();
        let cfg = EncoderConfig {
            scheme: EncoderScheme::Delta,
            steps: 3,
            delta_threshold: 0.15,
            seed: 0,
        };
        let d = encode_window(&w, &cfg, "k").unwrap();
        assert!(d.binary);
        assert_eq!(d.frame(2).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0]);
        assert_eq!(d.event_rate(), 0.5);
        let direct = encode_window(&w, &EncoderConfig { scheme: EncoderScheme::DirectCurrent, ..cfg.clone() }, "k").unwrap();
        assert_eq!(direct.frame(1), &w);
        assert!(!direct.binary);
        let rate = encode_window(&w, &EncoderConfig { scheme: EncoderScheme::Rate, ..cfg }, "k").unwrap();
        assert!(matches!(&rate.frames, Frames::PerStep(f) if f.len() == 3));
    }

    proptest! {
        #[test]
        fn delta_negation_swaps_planes(signal in proptest::collection::vec(-3.0f64..3.0, 1..64), th in 0.05f64..1.0) {
            let pos = encode_delta(&row(&signal), th).unwrap();
            let neg: Vec<f64> = signal.iter().map(|v| -v).collect();
            let neg = encode_delta(&row(&neg), th).unwrap();
            prop_assert_eq!(pos.on, neg.off);
            prop_assert_eq!(pos.off, neg.on);
        }

        #[test]
        fn delta_count_non_increasing_in_threshold_for_monotone_signals(mut signal in proptest::collection::vec(-3.0f64..3.0, 1..64), a in 0.05f64..1.0, b in 0.05f64..1.0, falling in any::<bool>()) {
            signal.sort_by(f64::total_cmp);
            if falling {
                signal.reverse();
            }
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let w = row(&signal);
            prop_assert!(encode_delta(&w, hi).unwrap().spike_count() <= encode_delta(&w, lo).unwrap().spike_count());
        }

        #[test]
        fn encoders_emit_binary(signal in proptest::collection::vec(-3.0f64..3.0, 2..32), seed in 0u64..1000) {
            let w = Tensor::matrix(2, signal.len() / 2, signal[..signal.len() / 2 * 2].to_vec()).unwrap();
            let r = encode_rate(&w, 4, seed).unwrap();
            prop_assert!(r.data().iter().all(|&v| v <= 1));
            let rate = r.firing_rate();
            prop_assert!((0.0..=1.0).contains(&rate));
            prop_assert_eq!(rate, r.spike_count() as f64 / r.data().len() as f64);
        }
    }
}
