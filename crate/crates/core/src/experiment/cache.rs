//! Binary cache of a normalized split: a JSON header line describing every
//! example, followed by the windows as little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::edf::{DatasetSplit, LabeledExample, MotorClass, NormStats};
use crate::numerics::Tensor;

const MAGIC: &[u8] = b"SPIKEFED-SPLIT 1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExampleMeta {
    subject: String,
    run: u32,
    onset: usize,
    label: usize,
    train: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    seed: u64,
    stats: NormStats,
    examples: Vec<ExampleMeta>,
}

/// A cache file's bytes with their hex SHA-256.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheFile {
    pub bytes: Vec<u8>,
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_cache(split: &DatasetSplit) -> CacheFile {
    let shape = split
        .train
        .first()
        .or(split.test.first())
        .map(|e| e.window.shape().to_vec())
        .unwrap_or_default();
    let meta = |e: &LabeledExample, train: bool| ExampleMeta {
        subject: e.subject_id.clone(),
        run: e.run,
        onset: e.onset_sample,
        label: e.label.id(),
        train,
    };
    let header = Header {
        shape,
        seed: split.seed,
        stats: split.stats.clone(),
        examples: split
            .train
            .iter()
            .map(|e| meta(e, true))
            .chain(split.test.iter().map(|e| meta(e, false)))
            .collect(),
    };
    let mut bytes = MAGIC.to_vec();
    bytes.extend(serde_json::to_vec(&header).expect("header serializes"));
    bytes.push(b'\n');
    for e in split.train.iter().chain(&split.test) {
        for v in e.window.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = sha256_hex(&bytes);
    CacheFile { bytes, digest }
}

pub fn read_cache(bytes: &[u8], path: &Path) -> Result<DatasetSplit, ExperimentError> {
    let bad = |reason: String| ExperimentError::Cache {
        path: path.to_path_buf(),
        reason,
    };
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("not a split cache (bad magic)".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("header line is not terminated".into()))?;
    let header: Header =
        serde_json::from_slice(&rest[..nl]).map_err(|e| bad(format!("header: {e}")))?;
    let data = &rest[nl + 1..];
    let per: usize = header.shape.iter().product();
    let expected = per * header.examples.len() * 8;
    if data.len() != expected {
        return Err(bad(format!(
            "data section holds {} bytes, header implies {expected}",
            data.len()
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, m) in header.examples.into_iter().enumerate() {
        let chunk = &data[i * per * 8..(i + 1) * per * 8];
        let values: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let window =
            Tensor::new(header.shape.clone(), values).map_err(|e| bad(format!("example {i}: {e}")))?;
        let label =
            MotorClass::from_id(m.label).ok_or_else(|| bad(format!("example {i}: label {}", m.label)))?;
        let e = LabeledExample {
            window,
            label,
            subject_id: m.subject,
            run: m.run,
            onset_sample: m.onset,
        };
        if m.train {
            train.push(e);
        } else {
            test.push(e);
        }
    }
    Ok(DatasetSplit {
        train,
        test,
        stats: header.stats,
        seed: header.seed,
    })
}
