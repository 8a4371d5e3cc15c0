//! Per-flow traffic measurement with a two-layer saturating sketch in front of
//! an in-memory working set of active flows (WSAF).
//!
//! Every packet touches one word-sized block per metric. A block that fills
//! up to its saturation threshold is recycled and promotes a single bit into a
//! second layer; only a saturated second-layer block produces a table update.
//! The result is that the flow table sees a small fraction of the packet rate
//! while every flow stays decodable online from table + sketch residue.
//!
//! Module map:
//!
//! * [`key`]: the 5-tuple flow identifier.
//! * [`sketch`]: blocks, coupon-collector decoding and the two-layer state machine.
//! * [`wsaf`]: the open-addressing flow table with operation counters.
//! * [`pipeline`]: the packet path, epochs, residue attribution and sharding.
//! * [`trace`]: pcap/CSV readers and writers, the synthetic generator and the exact oracle.
//! * [`analytics`]: size-class error, heavy-hitter confusion and regulation series.
//! * [`report`]: the report CSV schema.

pub mod analytics;
pub mod error;
pub mod key;
pub mod pipeline;
pub mod report;
pub mod sketch;
pub mod trace;
pub mod wsaf;

pub use analytics::{
    detect_heavy_hitters, regulation_series, size_class_errors, FlowEstimates, HeavyHitterReport,
    Metric, RegulationRow, SizeClassStat,
};
pub use error::{Error, Result};
pub use key::FlowKey;
pub use pipeline::{
    run_trace, Attribution, EpochReport, PacketSink, Pipeline, PipelineConfig, RegulationStats,
    ReportEntry, RunOutput, ShardedPipeline,
};
pub use report::ReportRow;
pub use sketch::{coupon_estimate, FlushEvent, Layering, SketchParams, TwoLayerSketch};
pub use trace::{OracleTable, TraceRecord};
pub use wsaf::{WsafEntry, WsafStats, WsafTable};
