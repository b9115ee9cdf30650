use std::collections::BTreeMap;
use std::fmt::Write;

use super::EegRecording;

/// Header fields, channel table and annotation histogram as plain text.
pub fn inspect_summary(rec: &EegRecording) -> String {
    let h = &rec.header;
    let mut out = String::new();
    let _ = writeln!(out, "[header]");
    let _ = writeln!(out, "subject = {:?}", rec.subject_id);
    let _ = writeln!(out, "version = {:?}", h.version);
    let _ = writeln!(out, "patient = {:?}", h.patient);
    let _ = writeln!(out, "recording = {:?}", h.recording);
    let _ = writeln!(out, "start = \"{} {}\"", h.start_date, h.start_time);
    let _ = writeln!(out, "reserved = {:?}", h.reserved);
    let _ = writeln!(out, "records = {}", h.num_records);
    let _ = writeln!(out, "record_duration_s = {}", h.record_duration);
    let _ = writeln!(out, "channels = {}", rec.num_channels());
    let _ = writeln!(out, "sampling_rate_hz = {}", rec.sampling_rate);
    let _ = writeln!(out, "samples_per_channel = {}", rec.num_samples());
    let _ = writeln!(out);
    let _ = writeln!(out, "[channels]");
    let _ = writeln!(out, "index\tlabel\tunit\tphysical_min\tphysical_max\tdigital_min\tdigital_max\tsamples_per_record");
    for (i, c) in rec.channels.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.label.trim(),
            c.physical_dimension,
            c.physical_min,
            c.physical_max,
            c.digital_min,
            c.digital_max,
            c.samples_per_record
        );
    }
    let mut hist: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &rec.annotations {
        *hist.entry(a.label.as_str()).or_default() += 1;
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[annotations]");
    let _ = writeln!(out, "total = {}", rec.annotations.len());
    for (label, count) in hist {
        let _ = writeln!(out, "{label:?} = {count}");
    }
    out
}
