//! Packet trace sources and the exact per-flow oracle.

pub(crate) mod csv_trace;
mod generate;
mod oracle;
pub mod pcap;

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

pub use csv_trace::{read_csv_trace, write_csv_trace, CsvTraceReader, CSV_TRACE_HEADER};
pub use generate::{generate_trace, GeneratedTrace, GeneratorConfig, PlantedClass, BASE_TS_US};
pub use oracle::{build_oracle, FlowTotals, OracleTable, ORACLE_HEADER};
pub use pcap::{read_pcap, write_pcap, PcapReader, PcapStats, PcapWriter};

use crate::error::Result;
use crate::key::FlowKey;

/// One packet event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    /// Microseconds since the Unix epoch.
    pub ts_us: u64,
    pub key: FlowKey,
    /// Bytes on the wire, at least 1.
    pub wire_len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Pcap,
}

impl TraceFormat {
    /// `.pcap` files are always treated as pcap so that a bad magic is reported
    /// instead of being misread as text. Other names are sniffed.
    pub fn detect(path: &Path) -> Result<Self> {
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pcap"))
        {
            return Ok(TraceFormat::Pcap);
        }
        let mut magic = [0u8; 4];
        let mut f = File::open(path)?;
        let n = f.read(&mut magic)?;
        if n == 4 && pcap::looks_like_pcap(magic) {
            Ok(TraceFormat::Pcap)
        } else {
            Ok(TraceFormat::Csv)
        }
    }
}

/// A trace file opened in whichever format it is stored.
pub enum TraceSource {
    Pcap(PcapReader<BufReader<File>>),
    Csv(CsvTraceReader<File>),
}

impl TraceSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match TraceFormat::detect(path)? {
            TraceFormat::Pcap => Ok(TraceSource::Pcap(read_pcap(path)?)),
            TraceFormat::Csv => Ok(TraceSource::Csv(read_csv_trace(path)?)),
        }
    }

    /// Skip counters; only pcap input skips records.
    pub fn pcap_stats(&self) -> Option<&PcapStats> {
        match self {
            TraceSource::Pcap(r) => Some(r.stats()),
            TraceSource::Csv(_) => None,
        }
    }
}

impl Iterator for TraceSource {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            TraceSource::Pcap(r) => r.next(),
            TraceSource::Csv(r) => r.next(),
        }
    }
}

/// Writes `records` to `path` in `format`.
pub fn write_trace(
    path: impl AsRef<Path>,
    format: TraceFormat,
    records: &[TraceRecord],
) -> Result<()> {
    match format {
        TraceFormat::Csv => write_csv_trace(path, records),
        TraceFormat::Pcap => write_pcap(path, records),
    }
}
