//! EDF/EDF+ ingestion, motor-imagery trial extraction, and train/test splits.

mod inspect;
mod parse;
mod split;
pub mod synthetic;
mod trials;
mod write;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use inspect::inspect_summary;
pub use parse::parse_edf;
pub use split::{split_normalize, DatasetSplit, NormStats, SplitError};
pub use trials::{build_trials, LabeledExample, MotorClass, RunKind, TaskSpec, TrialError, TrialSet};
pub use write::write_edf;

/// Label of the EDF+ annotation signal.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

/// Raw time points per subject across all fourteen runs of the motor
/// movement/imagery recordings (2 x 9760 baseline + 12 x 19680 task samples).
pub const EXPECTED_SUBJECT_SAMPLES: usize = 255_680;

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("input truncated at byte {offset}: {needed} more bytes required")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed header field `{field}` at byte {offset}: {reason}")]
    Header {
        field: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("data section at byte {offset} holds {actual} bytes, but {records} records of {record_bytes} bytes were declared")]
    RecordCount {
        offset: usize,
        records: i64,
        record_bytes: usize,
        actual: usize,
    },
    #[error("signals use different sampling rates ({0:?} samples per record)")]
    MixedSamplingRates(Vec<usize>),
    #[error("annotation syntax error at byte {offset}: {reason}")]
    Annotation { offset: usize, reason: String },
    #[error("cannot encode `{field}`: {reason}")]
    Encode { field: String, reason: String },
    #[error("sampling rate {actual} Hz differs from the expected {expected} Hz")]
    SamplingRate { expected: f64, actual: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Fixed header fields that are not per-signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeaderInfo {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    /// `EDF+C` / `EDF+D` for EDF+ files, blank for plain EDF.
    pub reserved: String,
    pub record_duration: f64,
    pub num_records: usize,
}

impl Default for EdfHeaderInfo {
    fn default() -> Self {
        Self {
            version: "0".into(),
            patient: "X X X X".into(),
            recording: "Startdate X X X X".into(),
            start_date: "01.01.09".into(),
            start_time: "00.00.00".into(),
            reserved: "EDF+C".into(),
            record_duration: 1.0,
            num_records: 0,
        }
    }
}

/// One ordinary (non-annotation) signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelInfo {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl ChannelInfo {
    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min)
            / f64::from(self.digital_max - self.digital_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        self.gain() * f64::from(i32::from(digital) - self.digital_min) + self.physical_min
    }

    pub fn to_digital(&self, physical: f64) -> i16 {
        let d = ((physical - self.physical_min) / self.gain()).round() + f64::from(self.digital_min);
        d.clamp(f64::from(self.digital_min), f64::from(self.digital_max)) as i16
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub onset: f64,
    pub duration: Option<f64>,
    pub label: String,
}

/// A parsed multichannel recording. Samples hold physical values.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub subject_id: String,
    pub header: EdfHeaderInfo,
    pub channels: Vec<ChannelInfo>,
    /// Hz, shared by every signal channel.
    pub sampling_rate: f64,
    pub samples: Vec<Vec<f64>>,
    /// Sorted by onset.
    pub annotations: Vec<Annotation>,
}

impl EegRecording {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn ensure_sampling_rate(&self, expected: f64) -> Result<(), EdfError> {
        if self.num_channels() > 0 && (self.sampling_rate - expected).abs() > 1e-9 {
            return Err(EdfError::SamplingRate {
                expected,
                actual: self.sampling_rate,
            });
        }
        Ok(())
    }
}

/// Subject and run parsed from names such as `S001R04.edf`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunFile {
    pub subject: String,
    pub run: u32,
}

impl RunFile {
    pub fn from_path(path: &Path) -> Option<Self> {
        let stem = path.file_stem()?.to_str()?;
        let (subject, run) = stem.split_once('R')?;
        if !subject.starts_with('S') || subject.len() < 2 || !subject[1..].bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        Some(Self {
            subject: subject.to_string(),
            run: run.parse().ok()?,
        })
    }

    pub fn file_name(&self) -> String {
        format!("{}R{:02}.edf", self.subject, self.run)
    }
}

/// Reads and parses a file, tagging the recording with the subject from its name.
pub fn read_edf_file(path: &Path) -> Result<EegRecording, EdfError> {
    let bytes = std::fs::read(path).map_err(|source| EdfError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rec = parse_edf(&bytes)?;
    if let Some(rf) = RunFile::from_path(path) {
        rec.subject_id = rf.subject;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_file_names() {
        let rf = RunFile::from_path(Path::new("/data/S001/S001R04.edf")).unwrap();
        assert_eq!(rf, RunFile { subject: "S001".into(), run: 4 });
        assert_eq!(rf.file_name(), "S001R04.edf");
        assert!(RunFile::from_path(Path::new("notes.edf")).is_none());
        assert!(RunFile::from_path(Path::new("SxR04.edf")).is_none());
    }

    #[test]
    fn digital_physical_mapping_round_trips() {
        let ch = ChannelInfo {
            label: "C3".into(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: -3276.8,
            physical_max: 3276.7,
            digital_min: -32768,
            digital_max: 32767,
            prefiltering: String::new(),
            samples_per_record: 160,
        };
        for d in [-32768i16, -1, 0, 1, 12345, 32767] {
            assert_eq!(ch.to_digital(ch.to_physical(d)), d);
        }
        assert!((ch.to_physical(0) - 0.0).abs() < 1e-9);
    }
}
