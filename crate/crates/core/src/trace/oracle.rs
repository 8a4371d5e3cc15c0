use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::csv_trace::{field, key_fields, parse_key};
use super::TraceRecord;
use crate::error::{Error, Result};
use crate::key::FlowKey;

pub const ORACLE_HEADER: [&str; 7] = [
    "src_ip", "dst_ip", "src_port", "dst_port", "proto", "packets", "bytes",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowTotals {
    pub packets: u64,
    pub bytes: u64,
}

/// Exact per-flow packet and byte counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleTable {
    flows: BTreeMap<FlowKey, FlowTotals>,
}

pub fn build_oracle<'a>(records: impl IntoIterator<Item = &'a TraceRecord>) -> OracleTable {
    let mut t = OracleTable::default();
    for r in records {
        t.add(r);
    }
    t
}

impl OracleTable {
    pub fn add(&mut self, rec: &TraceRecord) {
        let e = self.flows.entry(rec.key).or_default();
        e.packets += 1;
        e.bytes += u64::from(rec.wire_len);
    }

    pub fn insert(&mut self, key: FlowKey, totals: FlowTotals) {
        self.flows.insert(key, totals);
    }

    pub fn get(&self, key: &FlowKey) -> Option<FlowTotals> {
        self.flows.get(key).copied()
    }

    pub fn contains(&self, key: &FlowKey) -> bool {
        self.flows.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn total_packets(&self) -> u64 {
        self.flows.values().map(|t| t.packets).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.flows.values().map(|t| t.bytes).sum()
    }

    /// Ascending key order, so reductions over the table are reproducible.
    pub fn iter(&self) -> impl Iterator<Item = (&FlowKey, &FlowTotals)> {
        self.flows.iter()
    }

    /// Keys in ascending order.
    pub fn sorted_keys(&self) -> Vec<FlowKey> {
        self.flows.keys().copied().collect()
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(File::open(path)?)
    }

    pub fn from_reader<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(ORACLE_HEADER.iter().copied()) {
            return Err(Error::malformed(
                "oracle header",
                format!("expected {}", ORACLE_HEADER.join(",")),
            ));
        }
        let mut t = OracleTable::default();
        for rec in rdr.records() {
            let rec = rec?;
            let key = parse_key(&rec, 0)?;
            let totals = FlowTotals {
                packets: field(&rec, 5, "packets")?,
                bytes: field(&rec, 6, "bytes")?,
            };
            if t.flows.insert(key, totals).is_some() {
                return Err(Error::malformed("oracle", format!("duplicate key {key}")));
            }
        }
        Ok(t)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer(File::create(path)?)
    }

    /// Rows sorted by key.
    pub fn to_writer<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ORACLE_HEADER)?;
        for k in self.sorted_keys() {
            let t = self.flows[&k];
            let [s, d, sp, dp, p] = key_fields(&k);
            w.write_record([s, d, sp, dp, p, t.packets.to_string(), t.bytes.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
