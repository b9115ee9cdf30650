//! Seeded surrogate EEG laid out like the motor movement/imagery recordings:
//! 64 channels at 160 Hz, one EDF+ file per run, T0/T1/T2 cue annotations.
//!
//! Background activity is a per-channel AR(1) process plus a weak alpha
//! rhythm and white noise. During a cue, a class-specific band oscillation is
//! added over a class-specific group of channels, and each subject perturbs
//! the group gains and the oscillation frequency.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    write_edf, Annotation, ChannelInfo, EdfError, EdfHeaderInfo, EegRecording, MotorClass, RunFile,
    RunKind,
};
use crate::rng;

/// Electrode labels in the order the dataset stores them.
pub const CHANNEL_LABELS: [&str; 64] = [
    "Fc5.", "Fc3.", "Fc1.", "Fcz.", "Fc2.", "Fc4.", "Fc6.", "C5..", "C3..", "C1..", "Cz..", "C2..",
    "C4..", "C6..", "Cp5.", "Cp3.", "Cp1.", "Cpz.", "Cp2.", "Cp4.", "Cp6.", "Fp1.", "Fpz.", "Fp2.",
    "Af7.", "Af3.", "Afz.", "Af4.", "Af8.", "F7..", "F5..", "F3..", "F1..", "Fz..", "F2..", "F4..",
    "F6..", "F8..", "Ft7.", "Ft8.", "T7..", "T8..", "T9..", "T10.", "Tp7.", "Tp8.", "P7..", "P5..",
    "P3..", "P1..", "Pz..", "P2..", "P4..", "P6..", "P8..", "Po7.", "Po3.", "Poz.", "Po4.", "Po8.",
    "O1..", "Oz..", "O2..", "Iz..",
];

/// Imagery runs, alternating left/right and fists/feet.
pub const IMAGERY_RUNS: [u32; 6] = [4, 6, 8, 10, 12, 14];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub subjects: usize,
    pub runs: Vec<u32>,
    /// One-second records per run.
    pub records: usize,
    pub sampling_rate: usize,
    /// Peak amplitude of the cue oscillation, in microvolts.
    pub class_amplitude: f64,
    /// Stationary standard deviation of the AR(1) background, in microvolts.
    pub background_std: f64,
    pub white_noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            subjects: 3,
            runs: IMAGERY_RUNS.to_vec(),
            records: 123,
            sampling_rate: 160,
            class_amplitude: 100.0,
            background_std: 20.0,
            white_noise_std: 2.0,
            seed: 0,
        }
    }
}

pub fn subject_id(index: usize) -> String {
    format!("S{:03}", index + 1)
}

const REST_SECONDS: f64 = 4.2;
const CUE_SECONDS: f64 = 4.1;
const AR_COEFF: f64 = 0.97;

/// Class-specific channel groups: right hemisphere for the left fist, left
/// hemisphere for the right fist, both for both fists, midline for feet.
fn class_channels(class: MotorClass) -> &'static [&'static str] {
    match class {
        MotorClass::LeftFist => &["Fc4.", "Fc6.", "C4..", "C6..", "Cp4.", "Cp6.", "C2..", "F4.."],
        MotorClass::RightFist => &["Fc3.", "Fc5.", "C3..", "C5..", "Cp3.", "Cp5.", "C1..", "F3.."],
        MotorClass::BothFists => &["Fc3.", "C3..", "Cp3.", "Fc4.", "C4..", "Cp4.", "P3..", "P4.."],
        MotorClass::BothFeet => &["Fcz.", "Cz..", "Cpz.", "Fz..", "Pz..", "C1..", "C2..", "Poz."],
    }
}

fn class_frequency(class: MotorClass) -> f64 {
    match class {
        MotorClass::LeftFist => 9.0,
        MotorClass::RightFist => 11.0,
        MotorClass::BothFists => 13.0,
        MotorClass::BothFeet => 7.0,
    }
}

fn channel_index(label: &str) -> usize {
    CHANNEL_LABELS
        .iter()
        .position(|l| *l == label)
        .expect("known electrode")
}

fn channel_info(label: &str, fs: usize) -> ChannelInfo {
    ChannelInfo {
        label: label.to_string(),
        transducer: String::new(),
        physical_dimension: "uV".into(),
        physical_min: -8092.0,
        physical_max: 8092.0,
        digital_min: -8092,
        digital_max: 8092,
        prefiltering: String::new(),
        samples_per_record: fs,
    }
}

/// Generates one run. Returns `None` for runs without imagery cues.
pub fn generate_run(cfg: &SyntheticConfig, subject: usize, run: u32) -> Option<EegRecording> {
    let kind = RunKind::for_run(run)?;
    let sid = subject_id(subject);
    let fs = cfg.sampling_rate as f64;
    let n = cfg.records * cfg.sampling_rate;
    let duration = cfg.records as f64;

    // Subject traits are shared by every run of that subject.
    let mut subject_rng = rng::substream(cfg.seed, &["synthetic", &sid, "traits"]);
    let freq_shift: f64 = subject_rng.random_range(-1.0..1.0);
    let gains: Vec<f64> = (0..64).map(|_| subject_rng.random_range(0.6..1.4)).collect();

    let mut rng = rng::substream(cfg.seed, &["synthetic", &sid, &format!("R{run:02}")]);
    let mut annotations = Vec::new();
    let mut cues = Vec::new();
    let mut t = 0.0;
    while t < duration {
        annotations.push(Annotation {
            onset: t,
            duration: Some(REST_SECONDS),
            label: "T0".into(),
        });
        t = round_ds(t + REST_SECONDS);
        if t >= duration {
            break;
        }
        cues.push(t);
        t = round_ds(t + CUE_SECONDS);
    }
    let mut codes: Vec<&str> = (0..cues.len()).map(|i| if i % 2 == 0 { "T1" } else { "T2" }).collect();
    codes.shuffle(&mut rng);
    for (&onset, code) in cues.iter().zip(&codes) {
        annotations.push(Annotation {
            onset,
            duration: Some(CUE_SECONDS),
            label: (*code).into(),
        });
    }
    annotations.sort_by(|a, b| a.onset.total_cmp(&b.onset));

    let innovation = Normal::new(0.0, cfg.background_std * (1.0 - AR_COEFF * AR_COEFF).sqrt())
        .expect("valid std");
    let white = Normal::new(0.0, cfg.white_noise_std.max(0.0)).expect("valid std");
    let mut samples = Vec::with_capacity(64);
    for _ in 0..64 {
        let alpha_phase: f64 = rng.random_range(0.0..2.0 * PI);
        let alpha_amp: f64 = rng.random_range(0.0..0.3) * cfg.background_std;
        let mut x = cfg.background_std * rng.random_range(-1.0..1.0);
        let ch: Vec<f64> = (0..n)
            .map(|i| {
                x = AR_COEFF * x + innovation.sample(&mut rng);
                let alpha = alpha_amp * (2.0 * PI * 10.0 * i as f64 / fs + alpha_phase).sin();
                x + alpha + white.sample(&mut rng)
            })
            .collect();
        samples.push(ch);
    }

    for (&onset, code) in cues.iter().zip(&codes) {
        let class = kind.class_for(code).expect("cue code").expect("not rest");
        let f = class_frequency(class) + freq_shift;
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let amp = cfg.class_amplitude * rng.random_range(0.7..1.3);
        let start = (onset * fs).round() as usize;
        let end = ((onset + CUE_SECONDS) * fs).round().min(n as f64) as usize;
        for label in class_channels(class) {
            let c = channel_index(label);
            let len = end - start;
            for (i, v) in samples[c][start..end].iter_mut().enumerate() {
                let tt = i as f64 / fs;
                // Short ramps avoid a step at cue boundaries.
                let ramp = (tt / 0.25).min(((len - i) as f64 / fs) / 0.25).min(1.0);
                *v += gains[c] * amp * ramp * (2.0 * PI * f * tt + phase).sin();
            }
        }
    }

    let channels: Vec<ChannelInfo> = CHANNEL_LABELS
        .iter()
        .map(|l| channel_info(l, cfg.sampling_rate))
        .collect();
    // Store exactly what the file will hold.
    for (ch, info) in samples.iter_mut().zip(&channels) {
        for v in ch.iter_mut() {
            *v = info.to_physical(info.to_digital(*v));
        }
    }
    Some(EegRecording {
        subject_id: sid.clone(),
        header: EdfHeaderInfo {
            patient: format!("{sid} X X X"),
            num_records: cfg.records,
            ..EdfHeaderInfo::default()
        },
        channels,
        sampling_rate: fs,
        samples,
        annotations,
    })
}

fn round_ds(t: f64) -> f64 {
    (t * 10.0).round() / 10.0
}

/// Writes `<root>/<subject>/<subject>R<run>.edf` for every configured subject and run.
pub fn write_dataset(root: &Path, cfg: &SyntheticConfig) -> Result<Vec<PathBuf>, EdfError> {
    let mut paths = Vec::new();
    for s in 0..cfg.subjects {
        let dir = root.join(subject_id(s));
        std::fs::create_dir_all(&dir).map_err(|source| EdfError::Io {
            path: dir.clone(),
            source,
        })?;
        for &run in &cfg.runs {
            let Some(rec) = generate_run(cfg, s, run) else {
                continue;
            };
            let path = dir.join(
                RunFile {
                    subject: subject_id(s),
                    run,
                }
                .file_name(),
            );
            std::fs::write(&path, write_edf(&rec)?).map_err(|source| EdfError::Io {
                path: path.clone(),
                source,
            })?;
            paths.push(path);
        }
    }
    Ok(paths)
}
