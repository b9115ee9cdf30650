//! Text checkpoint container.
//!
//! ```text
//! spikefed-checkpoint 1
//! fingerprint 3f2a9c0d1e4b5a67
//! entries 2
//! param fc.weight 4,128
//! 0.0123 -0.5 ...
//! param fc.bias 4
//! 0 0 0 0
//! ```
//!
//! Values use Rust's shortest round-trip decimal form, so reloading is bit-exact.

use std::fmt::Write as _;

use super::{Fingerprint, NumericsError, ParameterSet, Tensor};

const MAGIC: &str = "spikefed-checkpoint 1";

pub fn write_checkpoint(params: &ParameterSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "fingerprint {}", params.fingerprint());
    let _ = writeln!(out, "entries {}", params.len());
    for (name, t) in params.entries() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "param {name} {}", dims.join(","));
        let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    out
}

pub fn read_checkpoint(text: &str) -> Result<ParameterSet, NumericsError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let err = |line: usize, message: &str| NumericsError::Checkpoint {
        line,
        message: message.to_string(),
    };
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| err(0, &format!("unexpected end of file, expected {what}")))
    };

    let (ln, magic) = next("header")?;
    if magic != MAGIC {
        return Err(err(ln, "not a spikefed checkpoint"));
    }
    let (ln, fp_line) = next("fingerprint")?;
    let declared = fp_line
        .strip_prefix("fingerprint ")
        .and_then(Fingerprint::parse_hex)
        .ok_or_else(|| err(ln, "malformed fingerprint line"))?;
    let (ln, count_line) = next("entry count")?;
    let count: usize = count_line
        .strip_prefix("entries ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(ln, "malformed entries line"))?;

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, head) = next("param header")?;
        let mut parts = head.split(' ');
        if parts.next() != Some("param") {
            return Err(err(ln, "expected `param <name> <shape>`"));
        }
        let name = parts.next().ok_or_else(|| err(ln, "missing name"))?;
        let shape_text = parts.next().unwrap_or("");
        if parts.next().is_some() {
            return Err(err(ln, "trailing fields after shape"));
        }
        let shape: Vec<usize> = if shape_text.is_empty() {
            vec![]
        } else {
            shape_text
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| err(ln, "malformed shape"))?
        };
        let (ln, body) = next("values")?;
        let data: Vec<f64> = body
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(ln, "malformed value"))?;
        let tensor = Tensor::new(shape, data).map_err(|e| err(ln, &e.to_string()))?;
        entries.push((name.to_string(), tensor));
    }
    let params = ParameterSet::new(entries)?;
    if params.fingerprint() != declared {
        return Err(NumericsError::FingerprintMismatch {
            expected: declared,
            actual: params.fingerprint(),
        });
    }
    Ok(params)
}
