//! The measurement packet path.
//!
//! Each packet costs one increment of the packet sketch and `len / U`
//! (probabilistically rounded) increments of the byte sketch. Flushes from
//! either sketch for the same packet are folded into a single WSAF
//! accumulate, and only those accumulates count as WSAF operations.

mod attribution;
mod run;
mod shard;

pub use run::{run_trace, Attribution, PacketSink, RunOutput};
pub use shard::ShardedPipeline;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::key::FlowKey;
use crate::sketch::{mix64, SketchParams, TwoLayerSketch};
use crate::trace::TraceRecord;
use crate::wsaf::{WsafTable, DEFAULT_HARD_CAPACITY, DEFAULT_INITIAL_CAPACITY};

const PACKET_SKETCH_DOMAIN: u64 = 0x01;
const BYTE_SKETCH_DOMAIN: u64 = 0x02;
const ROUNDING_DOMAIN: u64 = 0x03;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub packet_sketch: SketchParams,
    pub byte_sketch: SketchParams,
    /// Bytes represented by one byte-sketch increment.
    pub byte_unit: u32,
    /// Epoch length in seconds; 0 keeps the whole trace in one epoch.
    pub epoch_len_s: u64,
    pub wsaf_initial_capacity: usize,
    pub wsaf_hard_capacity: usize,
    pub shards: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::with_seed(0)
    }
}

impl PipelineConfig {
    /// Defaults with both sketch seeds derived from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = PipelineConfig {
            packet_sketch: SketchParams::default(),
            byte_sketch: SketchParams::default(),
            byte_unit: 64,
            epoch_len_s: 60,
            wsaf_initial_capacity: DEFAULT_INITIAL_CAPACITY,
            wsaf_hard_capacity: DEFAULT_HARD_CAPACITY,
            shards: 1,
            seed,
        };
        cfg.reseed(seed);
        cfg
    }

    /// Sets the pipeline seed and re-derives the sketch seeds from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.packet_sketch.seed = mix64(seed ^ PACKET_SKETCH_DOMAIN);
        self.byte_sketch.seed = mix64(seed ^ BYTE_SKETCH_DOMAIN);
    }

    /// Applies `f` to both sketch parameter sets.
    pub fn map_sketches(mut self, f: impl Fn(&mut SketchParams)) -> Self {
        f(&mut self.packet_sketch);
        f(&mut self.byte_sketch);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.packet_sketch.validate()?;
        self.byte_sketch.validate()?;
        if self.byte_unit == 0 {
            return Err(Error::InvalidParams("byte unit must be at least 1".into()));
        }
        if self.packet_sketch.seed == self.byte_sketch.seed {
            return Err(Error::InvalidParams(
                "packet and byte sketches need independent seeds".into(),
            ));
        }
        if self.shards == 0 {
            return Err(Error::InvalidParams("need at least one shard".into()));
        }
        Ok(())
    }

    /// Sketch memory across both metrics and all shards, in bytes.
    pub fn sketch_memory_bytes(&self) -> usize {
        (self.packet_sketch.memory_bytes() + self.byte_sketch.memory_bytes()) * self.shards
    }
}

/// Counters behind the regulation rate of one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegulationStats {
    pub packets_in: u64,
    /// Saturation-triggered WSAF accumulates (inserts + updates).
    pub wsaf_ops: u64,
    /// Flushes lost to a full WSAF table.
    pub dropped_flushes: u64,
    pub first_ts_us: Option<u64>,
    pub last_ts_us: Option<u64>,
}

impl RegulationStats {
    /// WSAF operations per input packet; 0 with no input.
    pub fn regulation_rate(&self) -> f64 {
        if self.packets_in == 0 {
            0.0
        } else {
            self.wsaf_ops as f64 / self.packets_in as f64
        }
    }

    /// Observed span in seconds, at least one microsecond.
    pub fn duration_s(&self) -> f64 {
        match (self.first_ts_us, self.last_ts_us) {
            (Some(a), Some(b)) => (b.saturating_sub(a)).max(1) as f64 / 1e6,
            _ => 0.0,
        }
    }

    pub fn pps(&self) -> f64 {
        let d = self.duration_s();
        if d > 0.0 {
            self.packets_in as f64 / d
        } else {
            0.0
        }
    }

    pub fn ips(&self) -> f64 {
        let d = self.duration_s();
        if d > 0.0 {
            self.wsaf_ops as f64 / d
        } else {
            0.0
        }
    }

    fn observe(&mut self, ts_us: u64) {
        self.packets_in += 1;
        self.first_ts_us.get_or_insert(ts_us);
        self.last_ts_us = Some(self.last_ts_us.map_or(ts_us, |t| t.max(ts_us)));
    }

    pub(crate) fn merge(&mut self, other: &RegulationStats) {
        self.packets_in += other.packets_in;
        self.wsaf_ops += other.wsaf_ops;
        self.dropped_flushes += other.dropped_flushes;
        self.first_ts_us = match (self.first_ts_us, other.first_ts_us) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.last_ts_us = match (self.last_ts_us, other.last_ts_us) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportEntry {
    pub key: FlowKey,
    pub packets_est: f64,
    /// In bytes.
    pub bytes_est: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: u64,
    /// Sorted by key.
    pub entries: Vec<ReportEntry>,
    pub stats: RegulationStats,
    /// Sketch residue left in blocks no reported key maps to (packets, bytes).
    pub unattributed: (f64, f64),
}

/// One shard's worth of sketches and flow table.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    packets: TwoLayerSketch,
    bytes: TwoLayerSketch,
    wsaf: WsafTable,
    rounding: ChaCha8Rng,
    stats: RegulationStats,
    epoch: u64,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        Self::with_stream(cfg, 0)
    }

    /// A pipeline with the same hashing as `new(cfg)` but independent random
    /// streams; shard `i` uses stream `i`.
    pub fn with_stream(cfg: PipelineConfig, stream: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rounding = ChaCha8Rng::seed_from_u64(mix64(cfg.seed ^ ROUNDING_DOMAIN));
        rounding.set_stream(stream);
        Ok(Pipeline {
            packets: TwoLayerSketch::with_stream(cfg.packet_sketch.clone(), stream)?,
            bytes: TwoLayerSketch::with_stream(cfg.byte_sketch.clone(), stream)?,
            wsaf: WsafTable::new(cfg.wsaf_initial_capacity, cfg.wsaf_hard_capacity)?,
            rounding,
            stats: RegulationStats::default(),
            epoch: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &RegulationStats {
        &self.stats
    }

    pub fn wsaf(&self) -> &WsafTable {
        &self.wsaf
    }

    pub fn packet_sketch(&self) -> &TwoLayerSketch {
        &self.packets
    }

    pub fn byte_sketch(&self) -> &TwoLayerSketch {
        &self.bytes
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: u64) {
        self.epoch = epoch;
    }

    /// Byte-sketch increments for a packet: `len / U` plus one more with
    /// probability `(len mod U) / U`.
    fn byte_increments(&mut self, wire_len: u32) -> u32 {
        let unit = self.cfg.byte_unit;
        let rem = wire_len % unit;
        let extra = rem > 0 && self.rounding.random_range(0..unit) < rem;
        wire_len / unit + u32::from(extra)
    }

    pub fn process_packet(&mut self, rec: &TraceRecord) -> Result<()> {
        if rec.wire_len == 0 {
            return Err(Error::InvalidParams(
                "packet length must be at least 1 byte".into(),
            ));
        }
        self.stats.observe(rec.ts_us);

        let packet_delta: f64 = self
            .packets
            .increment(&rec.key, 1)
            .iter()
            .map(|f| f.amount)
            .sum();
        let t = self.byte_increments(rec.wire_len);
        let byte_delta: f64 = if t > 0 {
            self.bytes
                .increment(&rec.key, t)
                .iter()
                .map(|f| f.amount)
                .sum::<f64>()
                * f64::from(self.cfg.byte_unit)
        } else {
            0.0
        };

        if packet_delta > 0.0 || byte_delta > 0.0 {
            match self
                .wsaf
                .accumulate(&rec.key, packet_delta, byte_delta, rec.ts_us)
            {
                Ok(_) => self.stats.wsaf_ops += 1,
                Err(Error::Capacity(_)) => self.stats.dropped_flushes += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Online estimate: WSAF accumulators plus the flow's decoded sketch residue.
    pub fn query_flow(&self, key: &FlowKey) -> (f64, f64) {
        let (wp, wb) = self
            .wsaf
            .lookup(key)
            .map_or((0.0, 0.0), |e| (e.packets_est, e.bytes_est));
        (
            wp + self.packets.decode_residue(key),
            wb + self.bytes.decode_residue(key) * f64::from(self.cfg.byte_unit),
        )
    }

    /// Closes the epoch: reports `keys` together with every WSAF key,
    /// attributing sketch residue among them, then resets all state.
    pub fn end_epoch(&mut self, keys: &[FlowKey]) -> EpochReport {
        let mut all: Vec<FlowKey> = keys
            .iter()
            .copied()
            .chain(self.wsaf.iter().map(|e| e.key))
            .collect();
        all.sort_unstable();
        all.dedup();

        let shares = attribution::attribute(&self.packets, &self.bytes, &self.wsaf, &all);
        let unit = f64::from(self.cfg.byte_unit);
        let entries: Vec<ReportEntry> = all
            .iter()
            .zip(&shares)
            .map(|(key, share)| {
                let (wp, wb) = self
                    .wsaf
                    .lookup(key)
                    .map_or((0.0, 0.0), |e| (e.packets_est, e.bytes_est));
                ReportEntry {
                    key: *key,
                    packets_est: wp + share.packets,
                    bytes_est: wb + share.byte_units * unit,
                }
            })
            .collect();

        let attributed_p: f64 = shares.iter().map(|s| s.packets).sum();
        let attributed_b: f64 = shares.iter().map(|s| s.byte_units).sum();
        let residue_p: f64 = self
            .packets
            .force_flush_all()
            .iter()
            .map(|r| r.estimate)
            .sum();
        let residue_b: f64 = self
            .bytes
            .force_flush_all()
            .iter()
            .map(|r| r.estimate)
            .sum();
        self.wsaf.drain();

        let report = EpochReport {
            epoch: self.epoch,
            entries,
            stats: std::mem::take(&mut self.stats),
            unattributed: (
                (residue_p - attributed_p).max(0.0),
                (residue_b - attributed_b).max(0.0) * unit,
            ),
        };
        self.epoch += 1;
        report
    }
}
