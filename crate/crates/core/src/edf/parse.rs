use super::{Annotation, ChannelInfo, EdfError, EdfHeaderInfo, EegRecording, ANNOTATION_LABEL};

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn field(&self, offset: usize, width: usize) -> Result<&'a [u8], EdfError> {
        let end = offset + width;
        if end > self.bytes.len() {
            return Err(EdfError::Truncated {
                offset: self.bytes.len(),
                needed: end - self.bytes.len(),
            });
        }
        Ok(&self.bytes[offset..end])
    }

    fn text(&self, name: &'static str, offset: usize, width: usize) -> Result<String, EdfError> {
        let raw = self.field(offset, width)?;
        if !raw.iter().all(|b| (0x20..=0x7e).contains(b)) {
            return Err(EdfError::Header {
                field: name,
                offset,
                reason: "non-printable ASCII".into(),
            });
        }
        Ok(String::from_utf8_lossy(raw).trim_end().to_string())
    }

    fn number<T: std::str::FromStr>(
        &self,
        name: &'static str,
        offset: usize,
        width: usize,
    ) -> Result<T, EdfError> {
        let text = self.text(name, offset, width)?;
        text.trim().parse::<T>().map_err(|_| EdfError::Header {
            field: name,
            offset,
            reason: format!("`{text}` is not a valid number"),
        })
    }
}

/// Parses a complete EDF or EDF+ file held in memory.
///
/// Samples are returned in physical units. If an `EDF Annotations` signal is
/// present its time-stamped annotation lists are decoded; the per-record
/// timekeeping entries are dropped.
pub fn parse_edf(bytes: &[u8]) -> Result<EegRecording, EdfError> {
    let cur = Cursor { bytes };
    cur.field(0, FIXED_HEADER)?;

    let version = cur.text("version", 0, 8)?;
    if version.trim() != "0" {
        return Err(EdfError::Header {
            field: "version",
            offset: 0,
            reason: format!("unsupported version `{version}`"),
        });
    }
    let patient = cur.text("patient", 8, 80)?;
    let recording = cur.text("recording", 88, 80)?;
    let start_date = cur.text("start date", 168, 8)?;
    let start_time = cur.text("start time", 176, 8)?;
    let header_bytes: usize = cur.number("header bytes", 184, 8)?;
    let reserved = cur.text("reserved", 192, 44)?;
    let declared_records: i64 = cur.number("number of records", 236, 8)?;
    let record_duration: f64 = cur.number("record duration", 244, 8)?;
    let ns: usize = cur.number("number of signals", 252, 4)?;

    if !(record_duration.is_finite() && record_duration >= 0.0) {
        return Err(EdfError::Header {
            field: "record duration",
            offset: 244,
            reason: "must be a non-negative number".into(),
        });
    }
    let expected_header = FIXED_HEADER + ns * SIGNAL_HEADER;
    if header_bytes != expected_header {
        return Err(EdfError::Header {
            field: "header bytes",
            offset: 184,
            reason: format!("declares {header_bytes}, {ns} signals need {expected_header}"),
        });
    }
    cur.field(0, expected_header)?;

    // Per-signal fields are stored column-wise: all labels, then all transducers, ...
    let mut offset = FIXED_HEADER;
    let mut column = |width: usize| {
        let start = offset;
        offset += ns * width;
        move |i: usize| start + i * width
    };
    let at_label = column(16);
    let at_transducer = column(80);
    let at_dimension = column(8);
    let at_pmin = column(8);
    let at_pmax = column(8);
    let at_dmin = column(8);
    let at_dmax = column(8);
    let at_prefilter = column(80);
    let at_spr = column(8);

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = cur.text("label", at_label(i), 16)?;
        let info = PendingSignal {
            label,
            transducer: cur.text("transducer", at_transducer(i), 80)?,
            physical_dimension: cur.text("physical dimension", at_dimension(i), 8)?,
            physical_min: cur.number("physical minimum", at_pmin(i), 8)?,
            physical_max: cur.number("physical maximum", at_pmax(i), 8)?,
            digital_min: cur.number("digital minimum", at_dmin(i), 8)?,
            digital_max: cur.number("digital maximum", at_dmax(i), 8)?,
            prefiltering: cur.text("prefiltering", at_prefilter(i), 80)?,
            samples_per_record: cur.number("samples per record", at_spr(i), 8)?,
        }
        .into_signal();
        if info.info.digital_max <= info.info.digital_min {
            return Err(EdfError::Header {
                field: "digital maximum",
                offset: at_dmax(i),
                reason: "must exceed digital minimum".into(),
            });
        }
        if !info.is_annotation
            && !(info.info.physical_max != info.info.physical_min
                && info.info.physical_min.is_finite()
                && info.info.physical_max.is_finite())
        {
            return Err(EdfError::Header {
                field: "physical maximum",
                offset: at_pmax(i),
                reason: "physical range is empty".into(),
            });
        }
        signals.push(info);
    }

    let rates: Vec<usize> = signals
        .iter()
        .filter(|s| !s.is_annotation)
        .map(|s| s.info.samples_per_record)
        .collect();
    if rates.windows(2).any(|w| w[0] != w[1]) {
        return Err(EdfError::MixedSamplingRates(rates));
    }

    let record_bytes: usize = signals.iter().map(|s| 2 * s.info.samples_per_record).sum();
    let data_len = bytes.len() - expected_header;
    let num_records = match declared_records {
        -1 if record_bytes > 0 && data_len.is_multiple_of(record_bytes) => data_len / record_bytes,
        n if n >= 0 => {
            let n = n as usize;
            let needed = n.checked_mul(record_bytes).ok_or(EdfError::RecordCount {
                offset: expected_header,
                records: declared_records,
                record_bytes,
                actual: data_len,
            })?;
            if data_len < needed {
                return Err(EdfError::Truncated {
                    offset: bytes.len(),
                    needed: needed - data_len,
                });
            }
            if data_len > needed {
                return Err(EdfError::RecordCount {
                    offset: expected_header,
                    records: declared_records,
                    record_bytes,
                    actual: data_len,
                });
            }
            n
        }
        _ => {
            return Err(EdfError::RecordCount {
                offset: expected_header,
                records: declared_records,
                record_bytes,
                actual: data_len,
            })
        }
    };

    let mut samples: Vec<Vec<f64>> = signals
        .iter()
        .filter(|s| !s.is_annotation)
        .map(|s| Vec::with_capacity(s.info.samples_per_record * num_records))
        .collect();
    let mut annotations = Vec::new();
    let mut pos = expected_header;
    for _ in 0..num_records {
        let mut ch = 0;
        for s in &signals {
            let n = s.info.samples_per_record;
            let chunk = &bytes[pos..pos + 2 * n];
            if s.is_annotation {
                decode_tals(chunk, pos, &mut annotations)?;
            } else {
                let out = &mut samples[ch];
                for pair in chunk.chunks_exact(2) {
                    out.push(s.info.to_physical(i16::from_le_bytes([pair[0], pair[1]])));
                }
                ch += 1;
            }
            pos += 2 * n;
        }
    }
    annotations.sort_by(|a: &Annotation, b: &Annotation| a.onset.total_cmp(&b.onset));

    let channels: Vec<ChannelInfo> = signals
        .into_iter()
        .filter(|s| !s.is_annotation)
        .map(|s| s.info)
        .collect();
    let sampling_rate = match (channels.first(), record_duration > 0.0) {
        (Some(c), true) => c.samples_per_record as f64 / record_duration,
        _ => 0.0,
    };

    Ok(EegRecording {
        subject_id: String::new(),
        header: EdfHeaderInfo {
            version,
            patient,
            recording,
            start_date,
            start_time,
            reserved,
            record_duration,
            num_records,
        },
        channels,
        sampling_rate,
        samples,
        annotations,
    })
}

struct PendingSignal {
    label: String,
    transducer: String,
    physical_dimension: String,
    physical_min: f64,
    physical_max: f64,
    digital_min: i32,
    digital_max: i32,
    prefiltering: String,
    samples_per_record: usize,
}

struct ParsedSignal {
    info: ChannelInfo,
    is_annotation: bool,
}

impl PendingSignal {
    fn into_signal(self) -> ParsedSignal {
        ParsedSignal {
            is_annotation: self.label == ANNOTATION_LABEL,
            info: ChannelInfo {
                label: self.label,
                transducer: self.transducer,
                physical_dimension: self.physical_dimension,
                physical_min: self.physical_min,
                physical_max: self.physical_max,
                digital_min: self.digital_min,
                digital_max: self.digital_max,
                prefiltering: self.prefiltering,
                samples_per_record: self.samples_per_record,
            },
        }
    }
}

/// Decodes the time-stamped annotation lists of one record's annotation signal.
///
/// Each TAL reads `+onset[\x15duration]\x14text\x14...\x14\x00`; unused bytes
/// are zero.
fn decode_tals(chunk: &[u8], base: usize, out: &mut Vec<Annotation>) -> Result<(), EdfError> {
    let mut i = 0;
    while i < chunk.len() {
        if chunk[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        let end = chunk[start..]
            .iter()
            .position(|&b| b == 0)
            .map(|p| start + p)
            .ok_or_else(|| EdfError::Annotation {
                offset: base + start,
                reason: "unterminated annotation list".into(),
            })?;
        let tal = &chunk[start..end];
        let bad = |reason: &str| EdfError::Annotation {
            offset: base + start,
            reason: reason.into(),
        };
        let mut parts = tal.split(|&b| b == 0x14);
        let stamp = parts.next().ok_or_else(|| bad("empty annotation list"))?;
        if tal.last() != Some(&0x14) {
            return Err(bad("annotation list must end with 0x14"));
        }
        let (onset_raw, duration_raw) = match stamp.iter().position(|&b| b == 0x15) {
            Some(p) => (&stamp[..p], Some(&stamp[p + 1..])),
            None => (stamp, None),
        };
        if !matches!(onset_raw.first(), Some(b'+') | Some(b'-')) {
            return Err(bad("onset must start with '+' or '-'"));
        }
        let onset = parse_decimal(onset_raw).ok_or_else(|| bad("malformed onset"))?;
        let duration = match duration_raw {
            Some(d) => Some(parse_decimal(d).ok_or_else(|| bad("malformed duration"))?),
            None => None,
        };
        for text in parts {
            if text.is_empty() {
                continue;
            }
            let label = std::str::from_utf8(text)
                .map_err(|_| bad("annotation text is not UTF-8"))?
                .to_string();
            out.push(Annotation {
                onset,
                duration,
                label,
            });
        }
        i = end + 1;
    }
    Ok(())
}

fn parse_decimal(raw: &[u8]) -> Option<f64> {
    let s = std::str::from_utf8(raw).ok()?;
    let v: f64 = s.parse().ok()?;
    v.is_finite().then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pad(s: &str, w: usize) -> String {
        format!("{s:<w$}")
    }

    /// Minimal single-channel header followed by `data`.
    fn one_channel(records: &str, spr: usize, data: &[u8]) -> Vec<u8> {
        let mut h = String::new();
        h += &pad("0", 8);
        h += &pad("X X X X", 80);
        h += &pad("Startdate X", 80);
        h += "01.01.09";
        h += "00.00.00";
        h += &pad("512", 8);
        h += &pad("", 44);
        h += &pad(records, 8);
        h += &pad("1", 8);
        h += &pad("1", 4);
        h += &pad("Fz", 16);
        h += &pad("", 80);
        h += &pad("uV", 8);
        h += &pad("-100", 8);
        h += &pad("100", 8);
        h += &pad("-2048", 8);
        h += &pad("2047", 8);
        h += &pad("", 80);
        h += &pad(&spr.to_string(), 8);
        h += &pad("", 32);
        let mut bytes = h.into_bytes();
        bytes.extend_from_slice(data);
        bytes
    }

    #[test]
    fn empty_recording() {
        let rec = parse_edf(&one_channel("0", 4, &[])).unwrap();
        assert_eq!(rec.num_channels(), 1);
        assert_eq!(rec.num_samples(), 0);
        assert!(rec.annotations.is_empty());
        assert_eq!(rec.sampling_rate, 4.0);
    }

    #[test]
    fn scales_digital_to_physical() {
        let data: Vec<u8> = [-2048i16, 2047].iter().flat_map(|v| v.to_le_bytes()).collect();
        let rec = parse_edf(&one_channel("1", 2, &data)).unwrap();
        assert_eq!(rec.samples[0], vec![-100.0, 100.0]);
    }

    #[test]
    fn unknown_record_count_is_inferred() {
        let data = vec![0u8; 8];
        let rec = parse_edf(&one_channel("-1", 2, &data)).unwrap();
        assert_eq!(rec.header.num_records, 2);
    }

    #[test]
    fn truncated_and_inconsistent_data() {
        assert!(matches!(
            parse_edf(&one_channel("2", 2, &[0u8; 6])),
            Err(EdfError::Truncated { needed: 2, .. })
        ));
        assert!(matches!(
            parse_edf(&one_channel("1", 2, &[0u8; 6])),
            Err(EdfError::RecordCount { .. })
        ));
        assert!(matches!(parse_edf(&[b'0'; 100]), Err(EdfError::Truncated { .. })));
    }

    #[test]
    fn malformed_number_names_field_and_offset() {
        let mut bytes = one_channel("1", 2, &[0u8; 4]);
        bytes[236..244].copy_from_slice(b"abc     ");
        match parse_edf(&bytes) {
            Err(EdfError::Header { field, offset, .. }) => {
                assert_eq!(field, "number of records");
                assert_eq!(offset, 236);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decodes_tal_lists() {
        let raw = b"+0\x14\x14\x00+1.5\x154.2\x14T1\x14\x00+3\x14a\x14b\x14\x00\x00\x00";
        let mut out = Vec::new();
        decode_tals(raw, 0, &mut out).unwrap();
        assert_eq!(
            out,
            vec![
                Annotation { onset: 1.5, duration: Some(4.2), label: "T1".into() },
                Annotation { onset: 3.0, duration: None, label: "a".into() },
                Annotation { onset: 3.0, duration: None, label: "b".into() },
            ]
        );
    }

    #[test]
    fn rejects_bad_tal() {
        let mut out = Vec::new();
        assert!(decode_tals(b"1.5\x14T1\x14\x00", 0, &mut out).is_err());
        assert!(decode_tals(b"+1.5\x14T1", 0, &mut out).is_err());
    }
}
