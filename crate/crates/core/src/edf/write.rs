use super::{Annotation, EdfError, EegRecording, ANNOTATION_LABEL};

fn encode_err(field: impl Into<String>, reason: impl Into<String>) -> EdfError {
    EdfError::Encode {
        field: field.into(),
        reason: reason.into(),
    }
}

fn put(out: &mut Vec<u8>, field: &str, value: &str, width: usize) -> Result<(), EdfError> {
    if value.len() > width {
        return Err(encode_err(field, format!("`{value}` exceeds {width} characters")));
    }
    if !value.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
        return Err(encode_err(field, "non-printable ASCII"));
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest text for `v` that fits an 8-character header field and parses back exactly.
fn number_field(field: &str, v: f64) -> Result<String, EdfError> {
    for text in [format!("{v}"), format!("{v:e}")] {
        if text.len() <= 8 && text.parse::<f64>().ok() == Some(v) {
            return Ok(text);
        }
    }
    Err(encode_err(field, format!("{v} does not fit in 8 characters")))
}

fn tal_time(v: f64) -> String {
    if v < 0.0 {
        format!("{v}")
    } else {
        format!("+{}", v.abs())
    }
}

fn annotation_tal(a: &Annotation) -> Result<Vec<u8>, EdfError> {
    if a.label.bytes().any(|b| matches!(b, 0x00 | 0x14 | 0x15)) {
        return Err(encode_err("annotation", format!("label {:?} contains TAL delimiters", a.label)));
    }
    let mut tal = tal_time(a.onset).into_bytes();
    if let Some(d) = a.duration {
        tal.push(0x15);
        tal.extend_from_slice(format!("{d}").as_bytes());
    }
    tal.push(0x14);
    tal.extend_from_slice(a.label.as_bytes());
    tal.push(0x14);
    tal.push(0x00);
    Ok(tal)
}

/// Serializes a recording as EDF+ (or plain EDF when there are no annotations).
///
/// Physical samples are quantized with each channel's digital range. A file
/// produced by [`super::parse_edf`] is written back so that it reparses to an
/// identical recording.
pub fn write_edf(rec: &EegRecording) -> Result<Vec<u8>, EdfError> {
    let h = &rec.header;
    let n_records = h.num_records;
    for (c, ch) in rec.channels.iter().enumerate() {
        let have = rec.samples.get(c).map_or(0, Vec::len);
        if have != ch.samples_per_record * n_records {
            return Err(encode_err(
                &ch.label,
                format!("{have} samples, header implies {}", ch.samples_per_record * n_records),
            ));
        }
    }
    if rec.samples.len() != rec.channels.len() {
        return Err(encode_err("samples", "one sample vector per channel required"));
    }

    // Annotations go to the record whose time span contains their onset.
    let with_annotations = !rec.annotations.is_empty();
    let mut per_record: Vec<Vec<u8>> = Vec::new();
    if with_annotations {
        if n_records == 0 {
            return Err(encode_err("annotations", "no data record to carry them"));
        }
        per_record = (0..n_records)
            .map(|r| {
                let mut tal = tal_time(r as f64 * h.record_duration).into_bytes();
                tal.extend_from_slice(&[0x14, 0x14, 0x00]);
                tal
            })
            .collect();
        for a in &rec.annotations {
            let slot = if h.record_duration > 0.0 {
                ((a.onset / h.record_duration).floor().max(0.0) as usize).min(n_records - 1)
            } else {
                0
            };
            per_record[slot].extend(annotation_tal(a)?);
        }
    }
    let annotation_spr = per_record.iter().map(|b| b.len().div_ceil(2)).max().unwrap_or(0);

    let ns = rec.channels.len() + usize::from(with_annotations);
    let mut out = Vec::with_capacity(256 * (ns + 1));
    put(&mut out, "version", &h.version, 8)?;
    put(&mut out, "patient", &h.patient, 80)?;
    put(&mut out, "recording", &h.recording, 80)?;
    put(&mut out, "start date", &h.start_date, 8)?;
    put(&mut out, "start time", &h.start_time, 8)?;
    put(&mut out, "header bytes", &(256 * (ns + 1)).to_string(), 8)?;
    put(&mut out, "reserved", &h.reserved, 44)?;
    put(&mut out, "number of records", &n_records.to_string(), 8)?;
    put(
        &mut out,
        "record duration",
        &number_field("record duration", h.record_duration)?,
        8,
    )?;
    put(&mut out, "number of signals", &ns.to_string(), 4)?;

    struct Row {
        label: String,
        transducer: String,
        dimension: String,
        pmin: String,
        pmax: String,
        dmin: String,
        dmax: String,
        prefilter: String,
        spr: String,
    }
    let mut rows = Vec::with_capacity(ns);
    for ch in &rec.channels {
        rows.push(Row {
            label: ch.label.clone(),
            transducer: ch.transducer.clone(),
            dimension: ch.physical_dimension.clone(),
            pmin: number_field("physical minimum", ch.physical_min)?,
            pmax: number_field("physical maximum", ch.physical_max)?,
            dmin: ch.digital_min.to_string(),
            dmax: ch.digital_max.to_string(),
            prefilter: ch.prefiltering.clone(),
            spr: ch.samples_per_record.to_string(),
        });
    }
    if with_annotations {
        rows.push(Row {
            label: ANNOTATION_LABEL.into(),
            transducer: String::new(),
            dimension: String::new(),
            pmin: "-1".into(),
            pmax: "1".into(),
            dmin: "-32768".into(),
            dmax: "32767".into(),
            prefilter: String::new(),
            spr: annotation_spr.to_string(),
        });
    }
    type Column = (&'static str, usize, fn(&Row) -> &str);
    let columns: [Column; 9] = [
        ("label", 16, |r| &r.label),
        ("transducer", 80, |r| &r.transducer),
        ("physical dimension", 8, |r| &r.dimension),
        ("physical minimum", 8, |r| &r.pmin),
        ("physical maximum", 8, |r| &r.pmax),
        ("digital minimum", 8, |r| &r.dmin),
        ("digital maximum", 8, |r| &r.dmax),
        ("prefiltering", 80, |r| &r.prefilter),
        ("samples per record", 8, |r| &r.spr),
    ];
    for (name, width, get) in columns {
        for row in &rows {
            put(&mut out, name, get(row), width)?;
        }
    }
    for _ in 0..ns {
        put(&mut out, "reserved", "", 32)?;
    }

    for r in 0..n_records {
        for (c, ch) in rec.channels.iter().enumerate() {
            let n = ch.samples_per_record;
            for &v in &rec.samples[c][r * n..(r + 1) * n] {
                out.extend_from_slice(&ch.to_digital(v).to_le_bytes());
            }
        }
        if let Some(tal) = per_record.get(r) {
            out.extend_from_slice(tal);
            out.extend(std::iter::repeat_n(0u8, 2 * annotation_spr - tal.len()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_fields_fit_and_round_trip() {
        assert_eq!(number_field("x", -3276.8).unwrap(), "-3276.8");
        assert_eq!(number_field("x", 1e-7).unwrap(), "1e-7");
        assert!(number_field("x", 0.123456789).is_err());
    }

    #[test]
    fn oversized_text_rejected() {
        let mut out = Vec::new();
        assert!(put(&mut out, "date", "123456789", 8).is_err());
    }
}
