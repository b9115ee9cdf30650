#![allow(dead_code)]

use rand::Rng;
use spikefed::edf::{DatasetSplit, LabeledExample, MotorClass, NormStats};
use spikefed::models::{LifConfig, LstmArch, Model, ModelKind, TrunkArch};
use spikefed::numerics::Tensor;
use spikefed::rng;

pub const CHANNELS: usize = 4;
pub const WINDOW: usize = 32;

pub fn tiny_trunk() -> TrunkArch {
    TrunkArch {
        in_channels: CHANNELS,
        window: WINDOW,
        conv1_channels: 4,
        conv1_kernel: 3,
        conv1_stride: 2,
        conv2_channels: 4,
        conv2_kernel: 3,
        conv2_stride: 2,
        hidden: 8,
        classes: 4,
    }
}

pub fn tiny_lstm() -> LstmArch {
    LstmArch {
        input: CHANNELS,
        hidden: 5,
        layers: 2,
        window: WINDOW,
        classes: 4,
    }
}

pub fn tiny_model(kind: ModelKind) -> Model {
    Model::new(kind, tiny_trunk(), tiny_lstm(), LifConfig::default())
}

/// Class-dependent sinusoid on one channel plus noise.
pub fn example(subject: &str, label: MotorClass, index: usize, seed: u64) -> LabeledExample {
    let mut r = rng::substream(seed, &["example", subject, &index.to_string()]);
    let mut data = Vec::with_capacity(CHANNELS * WINDOW);
    for c in 0..CHANNELS {
        for t in 0..WINDOW {
            let signal = if c == label.id() {
                2.0 * (t as f64 * (0.3 + 0.2 * label.id() as f64)).sin()
            } else {
                0.0
            };
            data.push(signal + r.random_range(-1.0..1.0));
        }
    }
    LabeledExample {
        window: Tensor::matrix(CHANNELS, WINDOW, data).unwrap(),
        label,
        subject_id: subject.into(),
        run: 4,
        onset_sample: index * WINDOW,
    }
}

/// `per_class` train and one test example per (subject, class).
pub fn tiny_split(subjects: &[&str], per_class: usize, seed: u64) -> DatasetSplit {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in subjects {
        for class in MotorClass::ALL {
            for i in 0..=per_class {
                let e = example(s, class, class.id() * 100 + i, seed);
                if i == per_class {
                    test.push(e);
                } else {
                    train.push(e);
                }
            }
        }
    }
    DatasetSplit {
        train,
        test,
        stats: NormStats {
            mean: vec![0.0; CHANNELS],
            std: vec![1.0; CHANNELS],
        },
        seed,
    }
}
