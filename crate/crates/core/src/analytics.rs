//! Accuracy and regulation statistics over finished reports.
//!
//! Size classes and the "actual" heavy-hitter set are always defined on the
//! oracle, never on estimates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::key::FlowKey;
use crate::pipeline::{EpochReport, RegulationStats};
use crate::report::{csv_writer, ReportRow};
use crate::trace::csv_trace::key_fields;
use crate::trace::{FlowTotals, OracleTable};

/// Written in place of an undefined statistic.
pub const UNDEFINED: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Packets,
    Bytes,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Packets => "packets",
            Metric::Bytes => "bytes",
        }
    }

    fn truth(self, t: &FlowTotals) -> f64 {
        match self {
            Metric::Packets => t.packets as f64,
            Metric::Bytes => t.bytes as f64,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "packets" => Ok(Metric::Packets),
            "bytes" => Ok(Metric::Bytes),
            _ => Err(Error::InvalidParams(format!("unknown metric {s:?}"))),
        }
    }
}

/// Per-flow estimates summed over all epochs of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowEstimates {
    flows: BTreeMap<FlowKey, (f64, f64)>,
}

impl FlowEstimates {
    pub fn from_reports(reports: &[EpochReport]) -> Self {
        let mut est = FlowEstimates::default();
        for e in reports.iter().flat_map(|r| &r.entries) {
            est.add(e.key, e.packets_est, e.bytes_est);
        }
        est
    }

    pub fn from_rows(rows: &[ReportRow]) -> Self {
        let mut est = FlowEstimates::default();
        for r in rows {
            est.add(r.entry.key, r.entry.packets_est, r.entry.bytes_est);
        }
        est
    }

    pub fn add(&mut self, key: FlowKey, packets: f64, bytes: f64) {
        let slot = self.flows.entry(key).or_default();
        slot.0 += packets;
        slot.1 += bytes;
    }

    /// Missing flows estimate to zero.
    pub fn get(&self, key: &FlowKey, metric: Metric) -> f64 {
        self.flows.get(key).map_or(0.0, |&(p, b)| match metric {
            Metric::Packets => p,
            Metric::Bytes => b,
        })
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

    pub fn total(&self, metric: Metric) -> f64 {
        self.flows
            .values()
            .map(|&(p, b)| if metric == Metric::Packets { p } else { b })
            .sum()
    }

    /// Sum of estimates over the oracle's keys only.
    pub fn total_over(&self, oracle: &OracleTable, metric: Metric) -> f64 {
        oracle.iter().map(|(k, _)| self.get(k, metric)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FlowKey, f64, f64)> {
        self.flows.iter().map(|(k, &(p, b))| (k, p, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeClassStat {
    pub metric: Metric,
    pub lower_bound: f64,
    pub n_flows: usize,
    /// `None` for an empty class.
    pub rel_rmse_pct: Option<f64>,
}

/// Relative RMSE in percent over flows whose true value is at least each
/// bound. Flows absent from the estimates count as estimated zero.
pub fn size_class_errors(
    est: &FlowEstimates,
    oracle: &OracleTable,
    bounds: &[f64],
    metric: Metric,
) -> Vec<SizeClassStat> {
    bounds
        .iter()
        .map(|&bound| {
            let (mut n, mut sq) = (0usize, 0.0f64);
            for (k, t) in oracle.iter() {
                let truth = metric.truth(t);
                if truth >= bound && truth > 0.0 {
                    let rel = (est.get(k, metric) - truth) / truth;
                    sq += rel * rel;
                    n += 1;
                }
            }
            SizeClassStat {
                metric,
                lower_bound: bound,
                n_flows: n,
                rel_rmse_pct: (n > 0).then(|| 100.0 * (sq / n as f64).sqrt()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeavyHitterReport {
    pub metric: Metric,
    pub threshold: f64,
    pub detected: BTreeSet<FlowKey>,
    pub actual: BTreeSet<FlowKey>,
    pub fpr: f64,
    pub fnr: f64,
}

impl HeavyHitterReport {
    pub fn false_positives(&self) -> impl Iterator<Item = &FlowKey> {
        self.detected.difference(&self.actual)
    }

    pub fn false_negatives(&self) -> impl Iterator<Item = &FlowKey> {
        self.actual.difference(&self.detected)
    }
}

pub fn detect_heavy_hitters(
    est: &FlowEstimates,
    oracle: &OracleTable,
    threshold: f64,
    metric: Metric,
) -> Result<HeavyHitterReport> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Domain(format!(
            "heavy-hitter threshold must be positive, got {threshold}"
        )));
    }
    let detected: BTreeSet<FlowKey> = est
        .iter()
        .filter(|&(_, p, b)| if metric == Metric::Packets { p } else { b } >= threshold)
        .map(|(k, _, _)| *k)
        .collect();
    let actual: BTreeSet<FlowKey> = oracle
        .iter()
        .filter(|(_, t)| metric.truth(t) >= threshold)
        .map(|(k, _)| *k)
        .collect();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let fpr = ratio(detected.difference(&actual).count(), detected.len());
    let fnr = ratio(actual.difference(&detected).count(), actual.len());
    Ok(HeavyHitterReport {
        metric,
        threshold,
        detected,
        actual,
        fpr,
        fnr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulationRow {
    pub epoch: u64,
    pub packets_in: u64,
    pub wsaf_ops: u64,
    pub pps: f64,
    pub ips: f64,
    pub regulation_rate: f64,
}

/// One row per epoch that saw packets.
pub fn regulation_series<'a>(
    snapshots: impl IntoIterator<Item = (u64, &'a RegulationStats)>,
) -> Vec<RegulationRow> {
    snapshots
        .into_iter()
        .filter(|(_, s)| s.packets_in > 0)
        .map(|(epoch, s)| RegulationRow {
            epoch,
            packets_in: s.packets_in,
            wsaf_ops: s.wsaf_ops,
            pps: s.pps(),
            ips: s.ips(),
            regulation_rate: s.regulation_rate(),
        })
        .collect()
}

pub fn write_size_classes<W: Write>(
    out: W,
    stats: &[SizeClassStat],
    digest: Option<&str>,
) -> Result<()> {
    let mut w = csv_writer(out, digest)?;
    w.write_record(["metric", "lower_bound", "n_flows", "rel_rmse_pct"])?;
    for s in stats {
        w.write_record([
            s.metric.to_string(),
            s.lower_bound.to_string(),
            s.n_flows.to_string(),
            s.rel_rmse_pct
                .map_or_else(|| UNDEFINED.to_string(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary rows: one per report.
pub fn write_heavy_hitter_summary<W: Write>(
    out: W,
    reports: &[HeavyHitterReport],
    digest: Option<&str>,
) -> Result<()> {
    let mut w = csv_writer(out, digest)?;
    w.write_record([
        "metric",
        "threshold",
        "detected",
        "actual",
        "false_pos",
        "false_neg",
        "fpr",
        "fnr",
    ])?;
    for r in reports {
        w.write_record([
            r.metric.to_string(),
            r.threshold.to_string(),
            r.detected.len().to_string(),
            r.actual.len().to_string(),
            r.false_positives().count().to_string(),
            r.false_negatives().count().to_string(),
            r.fpr.to_string(),
            r.fnr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Confusion sets: one row per key in `detected ∪ actual`.
pub fn write_heavy_hitter_sets<W: Write>(
    out: W,
    reports: &[HeavyHitterReport],
    digest: Option<&str>,
) -> Result<()> {
    let mut w = csv_writer(out, digest)?;
    w.write_record([
        "metric",
        "threshold",
        "src_ip",
        "dst_ip",
        "src_port",
        "dst_port",
        "proto",
        "detected",
        "actual",
    ])?;
    for r in reports {
        for k in r.detected.union(&r.actual) {
            let [s, d, sp, dp, p] = key_fields(k);
            let flag = |b: bool| if b { "1" } else { "0" }.to_string();
            w.write_record([
                r.metric.to_string(),
                r.threshold.to_string(),
                s,
                d,
                sp,
                dp,
                p,
                flag(r.detected.contains(k)),
                flag(r.actual.contains(k)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_regulation<W: Write>(
    out: W,
    rows: &[RegulationRow],
    digest: Option<&str>,
) -> Result<()> {
    let mut w = csv_writer(out, digest)?;
    w.write_record([
        "epoch",
        "packets_in",
        "wsaf_ops",
        "pps",
        "ips",
        "regulation_rate",
    ])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.packets_in.to_string(),
            r.wsaf_ops.to_string(),
            r.pps.to_string(),
            r.ips.to_string(),
            r.regulation_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
