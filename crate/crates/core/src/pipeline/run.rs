use std::collections::HashSet;

use super::{EpochReport, Pipeline};
use crate::error::Result;
use crate::key::FlowKey;
use crate::trace::TraceRecord;

/// Something that consumes packets and closes epochs.
pub trait PacketSink {
    fn process_packet(&mut self, rec: &TraceRecord) -> Result<()>;
    fn end_epoch(&mut self, keys: &[FlowKey]) -> EpochReport;
    fn set_epoch(&mut self, epoch: u64);
}

impl PacketSink for Pipeline {
    fn process_packet(&mut self, rec: &TraceRecord) -> Result<()> {
        Pipeline::process_packet(self, rec)
    }

    fn end_epoch(&mut self, keys: &[FlowKey]) -> EpochReport {
        Pipeline::end_epoch(self, keys)
    }

    fn set_epoch(&mut self, epoch: u64) {
        Pipeline::set_epoch(self, epoch)
    }
}

/// Which keys receive sketch residue at each epoch end.
#[derive(Debug, Clone, Default)]
pub enum Attribution {
    /// Only keys already in the WSAF; residue of never-flushed flows is lost.
    #[default]
    WsafKeys,
    /// Keys of this set that appeared during the epoch (evaluation with an
    /// exact oracle).
    KnownKeys(HashSet<FlowKey>),
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub reports: Vec<EpochReport>,
    pub records: u64,
}

/// Feeds `records` through `sink`, closing an epoch every `epoch_len_s`
/// seconds of trace time (measured from the first record). Epochs without
/// packets produce no report. A final report is always produced.
pub fn run_trace<S, I>(
    sink: &mut S,
    records: I,
    epoch_len_s: u64,
    attribution: &Attribution,
) -> Result<RunOutput>
where
    S: PacketSink + ?Sized,
    I: IntoIterator<Item = Result<TraceRecord>>,
{
    let epoch_us = epoch_len_s.saturating_mul(1_000_000);
    let mut out = RunOutput::default();
    let mut start: Option<u64> = None;
    let mut current = 0u64;
    let mut seen: HashSet<FlowKey> = HashSet::new();
    sink.set_epoch(0);

    let close = |sink: &mut S, seen: &mut HashSet<FlowKey>| {
        let keys: Vec<FlowKey> = match attribution {
            Attribution::WsafKeys => Vec::new(),
            Attribution::KnownKeys(_) => seen.drain().collect(),
        };
        sink.end_epoch(&keys)
    };

    for rec in records {
        let rec = rec?;
        let t0 = *start.get_or_insert(rec.ts_us);
        if let Some(e) = rec.ts_us.saturating_sub(t0).checked_div(epoch_us) {
            if e > current {
                out.reports.push(close(sink, &mut seen));
                current = e;
                sink.set_epoch(current);
            }
        }
        if let Attribution::KnownKeys(known) = attribution {
            if known.contains(&rec.key) {
                seen.insert(rec.key);
            }
        }
        sink.process_packet(&rec)?;
        out.records += 1;
    }
    out.reports.push(close(sink, &mut seen));
    Ok(out)
}
