//! Report CSV: one row per (flow, epoch).
//!
//! Every CSV written by this crate may start with a `# manifest_sha256=<hex>`
//! comment line; readers skip `#` lines.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::{EpochReport, ReportEntry};
use crate::trace::csv_trace::{field, key_fields, parse_key};

pub const REPORT_HEADER: [&str; 8] = [
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "proto",
    "packets_est",
    "bytes_est",
    "epoch",
];

pub const DIGEST_PREFIX: &str = "# manifest_sha256=";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub epoch: u64,
    pub entry: ReportEntry,
}

/// Opens a CSV writer, emitting the digest comment first when given.
pub(crate) fn csv_writer<W: Write>(mut out: W, digest: Option<&str>) -> Result<csv::Writer<W>> {
    if let Some(d) = digest {
        writeln!(out, "{DIGEST_PREFIX}{d}")?;
    }
    Ok(csv::Writer::from_writer(out))
}

pub(crate) fn checked_reader<R: Read>(
    input: R,
    header: &[&str],
    what: &str,
) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let got = rdr.headers()?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::malformed(
            format!("{what} header"),
            format!(
                "expected {}, got {}",
                header.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(rdr)
}

/// Rows in epoch order, each epoch sorted by key.
pub fn write_report<W: Write>(out: W, reports: &[EpochReport], digest: Option<&str>) -> Result<()> {
    let mut w = csv_writer(out, digest)?;
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        for e in &r.entries {
            let [s, d, sp, dp, p] = key_fields(&e.key);
            w.write_record([
                s,
                d,
                sp,
                dp,
                p,
                e.packets_est.to_string(),
                e.bytes_est.to_string(),
                r.epoch.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_file(
    path: impl AsRef<Path>,
    reports: &[EpochReport],
    digest: Option<&str>,
) -> Result<()> {
    write_report(BufWriter::new(File::create(path)?), reports, digest)
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut rdr = checked_reader(input, &REPORT_HEADER, "report")?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let entry = ReportEntry {
            key: parse_key(&rec, 0)?,
            packets_est: field(&rec, 5, "packets_est")?,
            bytes_est: field(&rec, 6, "bytes_est")?,
        };
        if !(entry.packets_est >= 0.0 && entry.bytes_est >= 0.0) {
            return Err(Error::malformed(
                "report",
                format!("negative or NaN estimate for {}", entry.key),
            ));
        }
        rows.push(ReportRow {
            epoch: field(&rec, 7, "epoch")?,
            entry,
        });
    }
    Ok(rows)
}

pub fn read_report_file(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    read_report(File::open(path)?)
}

/// Digest from the leading comment line, if any.
pub fn read_digest<R: Read>(input: R) -> Result<Option<String>> {
    let mut first = String::new();
    std::io::BufRead::read_line(&mut std::io::BufReader::new(input), &mut first)?;
    Ok(first
        .trim_end()
        .strip_prefix(DIGEST_PREFIX)
        .map(str::to_owned))
}
