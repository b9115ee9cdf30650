use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EegRecording;
use crate::numerics::Tensor;

/// The four motor-imagery classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotorClass {
    LeftFist = 0,
    RightFist = 1,
    BothFists = 2,
    BothFeet = 3,
}

impl MotorClass {
    pub const ALL: [MotorClass; 4] = [
        MotorClass::LeftFist,
        MotorClass::RightFist,
        MotorClass::BothFists,
        MotorClass::BothFeet,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MotorClass::LeftFist => "left-fist",
            MotorClass::RightFist => "right-fist",
            MotorClass::BothFists => "both-fists",
            MotorClass::BothFeet => "both-feet",
        }
    }
}

/// Which target pair a run presents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    /// Left or right target: T1 = left fist, T2 = right fist.
    LeftRight,
    /// Top or bottom target: T1 = both fists, T2 = both feet.
    FistsFeet,
}

impl RunKind {
    /// Imagery runs of the motor movement/imagery recordings. Baseline and
    /// physical-execution runs map to `None`.
    pub fn for_run(run: u32) -> Option<Self> {
        match run {
            4 | 8 | 12 => Some(RunKind::LeftRight),
            6 | 10 | 14 => Some(RunKind::FistsFeet),
            _ => None,
        }
    }

    pub fn class_for(self, code: &str) -> Result<Option<MotorClass>, TrialError> {
        match (self, code) {
            (_, "T0") => Ok(None),
            (RunKind::LeftRight, "T1") => Ok(Some(MotorClass::LeftFist)),
            (RunKind::LeftRight, "T2") => Ok(Some(MotorClass::RightFist)),
            (RunKind::FistsFeet, "T1") => Ok(Some(MotorClass::BothFists)),
            (RunKind::FistsFeet, "T2") => Ok(Some(MotorClass::BothFeet)),
            _ => Err(TrialError::UnknownCode(code.to_string())),
        }
    }
}

/// How to cut one recording into labelled windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub run_kind: RunKind,
    pub run: u32,
    /// Samples per window.
    pub window: usize,
}

impl TaskSpec {
    pub fn for_run(run: u32, window: usize) -> Option<Self> {
        RunKind::for_run(run).map(|run_kind| Self {
            run_kind,
            run,
            window,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrialError {
    #[error("unknown annotation code `{0}`")]
    UnknownCode(String),
    #[error("window length must be positive")]
    EmptyWindow,
}

/// A fixed-length `[channels, window]` slice with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub window: Tensor,
    pub label: MotorClass,
    pub subject_id: String,
    pub run: u32,
    /// First sample of the window within its run.
    pub onset_sample: usize,
}

impl LabeledExample {
    /// Stable identity used for seeding and ordering.
    pub fn key(&self) -> String {
        format!("{}/R{:02}/{}", self.subject_id, self.run, self.onset_sample)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialSet {
    pub examples: Vec<LabeledExample>,
    /// Cue annotations whose declared duration is shorter than the window.
    pub skipped_short: usize,
    /// Cue annotations whose window runs past the end of the signal.
    pub skipped_overrun: usize,
}

/// Cuts one window per non-rest cue annotation, starting at the cue onset.
pub fn build_trials(rec: &EegRecording, task: &TaskSpec) -> Result<TrialSet, TrialError> {
    if task.window == 0 {
        return Err(TrialError::EmptyWindow);
    }
    let mut set = TrialSet::default();
    let fs = rec.sampling_rate;
    let total = rec.num_samples();
    let channels = rec.num_channels();
    for a in &rec.annotations {
        let Some(label) = task.run_kind.class_for(&a.label)? else {
            continue;
        };
        if let Some(d) = a.duration {
            if ((d * fs).round() as usize) < task.window {
                set.skipped_short += 1;
                continue;
            }
        }
        let start = (a.onset * fs).round().max(0.0) as usize;
        if start + task.window > total {
            set.skipped_overrun += 1;
            continue;
        }
        let mut data = Vec::with_capacity(channels * task.window);
        for ch in &rec.samples {
            data.extend_from_slice(&ch[start..start + task.window]);
        }
        set.examples.push(LabeledExample {
            window: Tensor::matrix(channels, task.window, data).expect("samples are finite"),
            label,
            subject_id: rec.subject_id.clone(),
            run: task.run,
            onset_sample: start,
        });
    }
    if set.skipped_overrun > 0 {
        log::warn!(
            "{} run {}: {} cue windows exceed the signal and were skipped",
            rec.subject_id,
            task.run,
            set.skipped_overrun
        );
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edf::{Annotation, ChannelInfo, EdfHeaderInfo};

    fn recording(samples: usize, annotations: Vec<Annotation>) -> EegRecording {
        let channel = ChannelInfo {
            label: "C3".into(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: -100.0,
            physical_max: 100.0,
            digital_min: -2048,
            digital_max: 2047,
            prefiltering: String::new(),
            samples_per_record: 160,
        };
        EegRecording {
            subject_id: "S001".into(),
            header: EdfHeaderInfo::default(),
            channels: vec![channel.clone(), ChannelInfo { label: "C4".into(), ..channel }],
            sampling_rate: 160.0,
            samples: vec![(0..samples).map(|i| i as f64).collect(), vec![0.5; samples]],
            annotations,
        }
    }

    fn cue(onset: f64, label: &str) -> Annotation {
        Annotation {
            onset,
            duration: Some(4.1),
            label: label.into(),
        }
    }

    #[test]
    fn no_annotations_no_examples() {
        let rec = recording(2000, vec![]);
        let task = TaskSpec::for_run(4, 640).unwrap();
        assert!(build_trials(&rec, &task).unwrap().examples.is_empty());
    }

    #[test]
    fn left_right_run_labels() {
        let rec = recording(
            3000,
            vec![cue(0.0, "T0"), cue(1.0, "T1"), cue(6.0, "T0"), cue(9.0, "T2")],
        );
        let task = TaskSpec::for_run(4, 640).unwrap();
        let set = build_trials(&rec, &task).unwrap();
        let labels: Vec<_> = set.examples.iter().map(|e| e.label.id()).collect();
        assert_eq!(labels, vec![0, 1]);
        let first = &set.examples[0];
        assert_eq!(first.window.shape(), &[2, 640]);
        assert_eq!(first.onset_sample, 160);
        assert_eq!(first.window.data()[0], 160.0);
    }

    #[test]
    fn fists_feet_run_labels() {
        let rec = recording(3000, vec![cue(1.0, "T1"), cue(9.0, "T2")]);
        let task = TaskSpec::for_run(10, 640).unwrap();
        let labels: Vec<_> = build_trials(&rec, &task)
            .unwrap()
            .examples
            .iter()
            .map(|e| e.label.id())
            .collect();
        assert_eq!(labels, vec![2, 3]);
    }

    #[test]
    fn short_and_overrunning_trials_are_counted() {
        let mut short = cue(1.0, "T1");
        short.duration = Some(2.0);
        let rec = recording(2000, vec![short, cue(5.0, "T2"), cue(10.0, "T1")]);
        let set = build_trials(&rec, &TaskSpec::for_run(4, 640).unwrap()).unwrap();
        assert_eq!(set.examples.len(), 1);
        assert_eq!(set.skipped_short, 1);
        assert_eq!(set.skipped_overrun, 1);
    }

    #[test]
    fn unknown_code_is_an_error() {
        let rec = recording(2000, vec![cue(1.0, "T9")]);
        assert_eq!(
            build_trials(&rec, &TaskSpec::for_run(4, 640).unwrap()).unwrap_err(),
            TrialError::UnknownCode("T9".into())
        );
    }

    #[test]
    fn run_protocol() {
        for r in [4, 8, 12] {
            assert_eq!(RunKind::for_run(r), Some(RunKind::LeftRight));
        }
        for r in [6, 10, 14] {
            assert_eq!(RunKind::for_run(r), Some(RunKind::FistsFeet));
        }
        for r in [1, 2, 3, 5, 7, 9, 11, 13] {
            assert_eq!(RunKind::for_run(r), None);
        }
    }
}
