use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LabeledExample, MotorClass};
use crate::numerics::Tensor;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    Ratio(f64),
    #[error("no examples to split")]
    Empty,
    #[error("stratum ({subject}, {class}) has {count} example(s); at least 2 required")]
    SmallStratum {
        subject: String,
        class: &'static str,
        count: usize,
    },
    #[error("examples disagree on window shape: {first:?} vs {other:?}")]
    Shape { first: Vec<usize>, other: Vec<usize> },
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; a zero-variance channel stores 1.0.
    pub std: Vec<f64>,
}

impl NormStats {
    /// Pooled over every example and time point of each channel.
    pub fn fit(examples: &[LabeledExample]) -> Self {
        let Some(first) = examples.first() else {
            return Self {
                mean: Vec::new(),
                std: Vec::new(),
            };
        };
        let (channels, len) = (first.window.shape()[0], first.window.shape()[1]);
        let n = (examples.len() * len) as f64;
        let mut mean = vec![0.0; channels];
        for ex in examples {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += ex.window.data()[c * len..(c + 1) * len].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; channels];
        for ex in examples {
            for (c, v) in var.iter_mut().enumerate() {
                *v += ex.window.data()[c * len..(c + 1) * len]
                    .iter()
                    .map(|x| (x - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, window: &mut Tensor) {
        let len = window.shape()[1];
        for (c, row) in window.data_mut().chunks_mut(len).enumerate() {
            for x in row {
                *x = (*x - self.mean[c]) / self.std[c];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub stats: NormStats,
    pub seed: u64,
}

impl DatasetSplit {
    /// Subjects present in either partition, sorted.
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .train
            .iter()
            .chain(&self.test)
            .map(|e| e.subject_id.clone())
            .collect();
        s.sort();
        s.dedup();
        s
    }

    /// `(subject, class) -> (train, test)` counts.
    pub fn summary(&self) -> BTreeMap<(String, MotorClass), (usize, usize)> {
        let mut out: BTreeMap<(String, MotorClass), (usize, usize)> = BTreeMap::new();
        for e in &self.train {
            out.entry((e.subject_id.clone(), e.label)).or_default().0 += 1;
        }
        for e in &self.test {
            out.entry((e.subject_id.clone(), e.label)).or_default().1 += 1;
        }
        out
    }
}

/// Test examples taken from a stratum of `n`.
pub fn test_count(n: usize, ratio: f64) -> usize {
    (((n as f64) * (1.0 - ratio) + 1e-9).floor() as usize).clamp(1, n - 1)
}

/// Stratified split by (subject, class) followed by train-fitted z-scoring.
///
/// Each stratum is shuffled with its own seeded stream and its leading
/// `n - test_count(n)` examples go to train.
pub fn split_normalize(
    examples: Vec<LabeledExample>,
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit, SplitError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SplitError::Ratio(ratio));
    }
    let Some(first) = examples.first() else {
        return Err(SplitError::Empty);
    };
    let shape = first.window.shape().to_vec();
    if let Some(bad) = examples.iter().find(|e| e.window.shape() != shape.as_slice()) {
        return Err(SplitError::Shape {
            first: shape,
            other: bad.window.shape().to_vec(),
        });
    }

    let mut strata: BTreeMap<(String, MotorClass), Vec<LabeledExample>> = BTreeMap::new();
    for e in examples {
        strata.entry((e.subject_id.clone(), e.label)).or_default().push(e);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((subject, class), mut members) in strata {
        if members.len() < 2 {
            return Err(SplitError::SmallStratum {
                subject,
                class: class.name(),
                count: members.len(),
            });
        }
        let mut rng = rng::substream(seed, &["split", &subject, class.name()]);
        members.shuffle(&mut rng);
        let n_train = members.len() - test_count(members.len(), ratio);
        test.extend(members.split_off(n_train));
        train.extend(members);
    }

    let stats = NormStats::fit(&train);
    for e in train.iter_mut().chain(test.iter_mut()) {
        stats.apply(&mut e.window);
    }
    Ok(DatasetSplit {
        train,
        test,
        stats,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example(subject: &str, label: MotorClass, idx: usize) -> LabeledExample {
        let data = (0..3 * 5)
            .map(|i| ((idx * 31 + i * 7) % 13) as f64 * (1.0 + i as f64 / 4.0) - 2.0)
            .collect();
        LabeledExample {
            window: Tensor::matrix(3, 5, data).unwrap(),
            label,
            subject_id: subject.into(),
            run: 4,
            onset_sample: idx,
        }
    }

    fn corpus(per_stratum: usize) -> Vec<LabeledExample> {
        let mut v = Vec::new();
        for s in ["S001", "S002"] {
            for c in [MotorClass::LeftFist, MotorClass::BothFeet] {
                for i in 0..per_stratum {
                    v.push(example(s, c, i));
                }
            }
        }
        v
    }

    #[test]
    fn eight_two_per_stratum() {
        let split = split_normalize(corpus(10), 0.8, 1).unwrap();
        for (_, (tr, te)) in split.summary() {
            assert_eq!((tr, te), (8, 2));
        }
    }

    #[test]
    fn same_seed_same_membership() {
        let keys = |s: &DatasetSplit| {
            (
                s.train.iter().map(LabeledExample::key).collect::<Vec<_>>(),
                s.test.iter().map(LabeledExample::key).collect::<Vec<_>>(),
            )
        };
        let a = split_normalize(corpus(10), 0.8, 9).unwrap();
        let b = split_normalize(corpus(10), 0.8, 9).unwrap();
        assert_eq!(keys(&a), keys(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn train_is_standardized() {
        let split = split_normalize(corpus(10), 0.8, 2).unwrap();
        // Recompute the per-channel moments directly from the normalized train set.
        for c in 0..3 {
            let xs: Vec<f64> = split
                .train
                .iter()
                .flat_map(|e| e.window.data()[c * 5..(c + 1) * 5].to_vec())
                .collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            assert!(m.abs() < 1e-9, "mean {m}");
            assert!((sd - 1.0).abs() < 1e-9, "std {sd}");
        }
    }

    #[test]
    fn test_uses_train_statistics() {
        let raw = corpus(10);
        let split = split_normalize(raw.clone(), 0.8, 3).unwrap();
        let t = &split.test[0];
        let original = raw.iter().find(|e| e.key() == t.key() && e.label == t.label).unwrap();
        let x = original.window.data()[6];
        let expected = (x - split.stats.mean[1]) / split.stats.std[1];
        assert_eq!(t.window.data()[6], expected);
    }

    #[test]
    fn errors() {
        assert_eq!(split_normalize(vec![], 0.8, 0).unwrap_err(), SplitError::Empty);
        assert_eq!(split_normalize(corpus(3), 1.0, 0).unwrap_err(), SplitError::Ratio(1.0));
        assert!(matches!(
            split_normalize(corpus(1), 0.8, 0).unwrap_err(),
            SplitError::SmallStratum { count: 1, .. }
        ));
    }

    proptest! {
        #[test]
        fn partitions_cover_input_exactly(per in 2usize..12, ratio in 0.05f64..0.95, seed in 0u64..500) {
            let input = corpus(per);
            let mut all: Vec<String> = input.iter().map(|e| format!("{}{:?}", e.key(), e.label)).collect();
            let split = split_normalize(input, ratio, seed).unwrap();
            let mut got: Vec<String> = split.train.iter().chain(&split.test)
                .map(|e| format!("{}{:?}", e.key(), e.label)).collect();
            all.sort();
            got.sort();
            prop_assert_eq!(all, got);
            let train: std::collections::HashSet<_> = split.train.iter().map(|e| (e.key(), e.label)).collect();
            prop_assert!(split.test.iter().all(|e| !train.contains(&(e.key(), e.label))));
        }
    }
}
