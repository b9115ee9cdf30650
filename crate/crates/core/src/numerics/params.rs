use std::fmt;

use sha2::{Digest, Sha256};

use super::{NumericsError, Tensor};

/// Hash over the ordered `(name, shape)` pairs of a parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub u64);

impl Fingerprint {
    pub fn of_layout<'a, I>(layout: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a [usize])>,
    {
        let mut hasher = Sha256::new();
        for (name, shape) in layout {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((shape.len() as u64).to_le_bytes());
            for &d in shape {
                hasher.update((d as u64).to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        Fingerprint(u64::from_be_bytes(head))
    }

    pub fn parse_hex(s: &str) -> Option<Self> {
        (s.len() == 16).then(|| u64::from_str_radix(s, 16).ok()).flatten().map(Fingerprint)
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Ordered, uniquely named collection of layer tensors.
///
/// This is the only model state that crosses the client/server boundary in
/// federated training. Values are never mutated in place once constructed;
/// updates produce a new set with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
    fingerprint: Fingerprint,
}

impl ParameterSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self, NumericsError> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(other, _)| other == name) {
                return Err(NumericsError::DuplicateName(name.clone()));
            }
        }
        let fingerprint =
            Fingerprint::of_layout(entries.iter().map(|(n, t)| (n.as_str(), t.shape())));
        Ok(Self {
            entries,
            fingerprint,
        })
    }

    pub fn zeros(layout: &[(String, Vec<usize>)]) -> Result<Self, NumericsError> {
        Self::new(
            layout
                .iter()
                .map(|(n, s)| (n.clone(), Tensor::zeros(s)))
                .collect(),
        )
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Flat view of every value in entry order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    /// Rebuilds a set with this layout from flat values.
    pub fn with_flat_values(&self, values: &[f64]) -> Result<Self, NumericsError> {
        if values.len() != self.num_elements() {
            return Err(NumericsError::ElementCount {
                shape: vec![self.num_elements()],
                expected: self.num_elements(),
                actual: values.len(),
            });
        }
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            let n = t.len();
            entries.push((
                name.clone(),
                Tensor::new(t.shape().to_vec(), values[offset..offset + n].to_vec())?,
            ));
            offset += n;
        }
        Ok(Self {
            entries,
            fingerprint: self.fingerprint,
        })
    }

    pub fn ensure_layout(&self, expected: Fingerprint) -> Result<(), NumericsError> {
        if self.fingerprint != expected {
            return Err(NumericsError::FingerprintMismatch {
                expected,
                actual: self.fingerprint,
            });
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ParameterSet) -> Result<f64, NumericsError> {
        other.ensure_layout(self.fingerprint)?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .filter_map(|((_, a), (_, b))| a.max_abs_diff(b))
            .fold(0.0, f64::max))
    }

    /// Bitwise equality of every value, distinguishing `0.0` from `-0.0`.
    pub fn bit_identical(&self, other: &ParameterSet) -> bool {
        self.fingerprint == other.fingerprint
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((_, a), (_, b))| {
                    a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }

    pub(crate) fn map_values<F>(&self, other: &ParameterSet, mut f: F) -> Result<Self, NumericsError>
    where
        F: FnMut(f64, f64) -> f64,
    {
        other.ensure_layout(self.fingerprint)?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for ((name, a), (_, b)) in self.entries.iter().zip(&other.entries) {
            let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite { op: "parameter update" });
            }
            entries.push((name.clone(), Tensor::from_parts(a.shape().to_vec(), data)));
        }
        Ok(Self {
            entries,
            fingerprint: self.fingerprint,
        })
    }
}

/// Gradients laid out exactly like the [`ParameterSet`] they differentiate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(ParameterSet);

impl GradientSet {
    pub fn new(inner: ParameterSet) -> Self {
        Self(inner)
    }

    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self(
            ParameterSet::zeros(&params.layout())
                .expect("layout of a valid set has unique names"),
        )
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.0.fingerprint()
    }

    pub fn as_set(&self) -> &ParameterSet {
        &self.0
    }

    pub fn into_set(self) -> ParameterSet {
        self.0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&self, other: &GradientSet, scale: f64) -> Result<Self, NumericsError> {
        Ok(Self(self.0.map_values(&other.0, |a, b| a + scale * b)?))
    }

    pub fn scaled(&self, scale: f64) -> Result<Self, NumericsError> {
        Ok(Self(self.0.map_values(&self.0, |a, _| a * scale)?))
    }
}

/// Plain stochastic gradient descent: `p <- p - lr * g` for every element.
pub fn sgd_step(
    params: &ParameterSet,
    grads: &GradientSet,
    lr: f64,
) -> Result<ParameterSet, NumericsError> {
    params.map_values(grads.as_set(), |p, g| p - lr * g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(values: &[(&str, Vec<f64>)]) -> ParameterSet {
        ParameterSet::new(
            values
                .iter()
                .map(|(n, v)| (n.to_string(), Tensor::vector(v.clone()).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let p = set(&[("w", vec![1.0])]);
        let g = GradientSet::new(set(&[("w", vec![0.0])]));
        assert_eq!(sgd_step(&p, &g, 0.01).unwrap().flat_values(), vec![1.0]);
    }

    #[test]
    fn sgd_single_step() {
        let p = set(&[("w", vec![1.0])]);
        let g = GradientSet::new(set(&[("w", vec![2.0])]));
        let out = sgd_step(&p, &g, 0.01).unwrap().flat_values();
        assert!((out[0] - 0.98).abs() < 1e-15);
    }

    #[test]
    fn sgd_two_elements() {
        let p = set(&[("w", vec![1.0, -1.0])]);
        let g = GradientSet::new(set(&[("w", vec![0.5, 0.5])]));
        let out = sgd_step(&p, &g, 0.1).unwrap().flat_values();
        assert!((out[0] - 0.95).abs() < 1e-15);
        assert!((out[1] + 1.05).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_layout_mismatch() {
        let p = set(&[("w", vec![1.0])]);
        let g = GradientSet::new(set(&[("v", vec![1.0])]));
        assert!(matches!(
            sgd_step(&p, &g, 0.1),
            Err(NumericsError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::vector(vec![0.0]).unwrap();
        let err = ParameterSet::new(vec![("a".into(), t.clone()), ("a".into(), t)]).unwrap_err();
        assert_eq!(err, NumericsError::DuplicateName("a".into()));
    }

    #[test]
    fn fingerprint_tracks_layout_not_values() {
        let a = set(&[("w", vec![1.0, 2.0])]);
        let b = set(&[("w", vec![3.0, 4.0])]);
        let c = set(&[("w", vec![1.0, 2.0, 3.0])]);
        let d = set(&[("v", vec![1.0, 2.0])]);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_ne!(a.fingerprint(), d.fingerprint());
        let reshaped = ParameterSet::new(vec![(
            "w".into(),
            Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap(),
        )])
        .unwrap();
        assert_ne!(a.fingerprint(), reshaped.fingerprint());
    }

    #[test]
    fn fingerprint_hex_round_trip() {
        let f = set(&[("w", vec![1.0])]).fingerprint();
        assert_eq!(Fingerprint::parse_hex(&f.to_string()), Some(f));
    }
}
