//! N-way sharding by the high bits of the packet sketch's layer-1 hash.
//!
//! Each shard runs a private [`Pipeline`] (full-size sketches and its own
//! WSAF segment) on a worker thread fed by a bounded single-producer queue.
//! Shards share hash functions but draw from distinct random streams, and a
//! flow's packets always reach the same shard in trace order, so results do
//! not depend on thread scheduling.

use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver, Sender};

use super::run::PacketSink;
use super::{EpochReport, Pipeline, PipelineConfig, RegulationStats};
use crate::error::{Error, Result};
use crate::key::FlowKey;
use crate::sketch::BlockHasher;
use crate::trace::TraceRecord;

const BATCH: usize = 2048;
const QUEUE_DEPTH: usize = 16;

enum Msg {
    Batch(Vec<TraceRecord>),
    EndEpoch(Vec<FlowKey>, Sender<EpochReport>),
    SetEpoch(u64),
    Query(FlowKey, Sender<(f64, f64)>),
}

struct Worker {
    tx: Sender<Msg>,
    handle: Option<JoinHandle<()>>,
    pending: Vec<TraceRecord>,
}

pub struct ShardedPipeline {
    router: BlockHasher,
    workers: Vec<Worker>,
    epoch: u64,
}

fn worker_loop(mut p: Pipeline, rx: Receiver<Msg>) {
    for msg in rx {
        match msg {
            Msg::Batch(recs) => {
                for r in &recs {
                    // Lengths are validated before routing.
                    p.process_packet(r).expect("validated record");
                }
            }
            Msg::EndEpoch(keys, reply) => {
                let _ = reply.send(p.end_epoch(&keys));
            }
            Msg::SetEpoch(e) => p.set_epoch(e),
            Msg::Query(k, reply) => {
                let _ = reply.send(p.query_flow(&k));
            }
        }
    }
}

impl ShardedPipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let router = BlockHasher::new(
            cfg.packet_sketch.seed,
            cfg.packet_sketch.blocks1,
            cfg.packet_sketch.blocks2,
        );
        let mut workers = Vec::with_capacity(cfg.shards);
        for shard in 0..cfg.shards {
            let p = Pipeline::with_stream(cfg.clone(), shard as u64)?;
            let (tx, rx) = bounded(QUEUE_DEPTH);
            let handle = std::thread::Builder::new()
                .name(format!("flowreg-shard-{shard}"))
                .spawn(move || worker_loop(p, rx))?;
            workers.push(Worker {
                tx,
                handle: Some(handle),
                pending: Vec::with_capacity(BATCH),
            });
        }
        Ok(ShardedPipeline {
            router,
            workers,
            epoch: 0,
        })
    }

    pub fn shards(&self) -> usize {
        self.workers.len()
    }

    pub fn shard_of(&self, key: &FlowKey) -> usize {
        let top = self.router.hash1(key) >> 32;
        ((top * self.workers.len() as u64) >> 32) as usize
    }

    fn send(w: &Worker, msg: Msg) {
        w.tx.send(msg).expect("shard worker exited");
    }

    fn flush_pending(&mut self) {
        for w in &mut self.workers {
            if !w.pending.is_empty() {
                let batch = std::mem::replace(&mut w.pending, Vec::with_capacity(BATCH));
                Self::send(w, Msg::Batch(batch));
            }
        }
    }

    pub fn process_packet(&mut self, rec: &TraceRecord) -> Result<()> {
        if rec.wire_len == 0 {
            return Err(Error::InvalidParams(
                "packet length must be at least 1 byte".into(),
            ));
        }
        let s = self.shard_of(&rec.key);
        let w = &mut self.workers[s];
        w.pending.push(*rec);
        if w.pending.len() >= BATCH {
            let batch = std::mem::replace(&mut w.pending, Vec::with_capacity(BATCH));
            Self::send(w, Msg::Batch(batch));
        }
        Ok(())
    }

    pub fn query_flow(&mut self, key: &FlowKey) -> (f64, f64) {
        self.flush_pending();
        let (tx, rx) = bounded(1);
        Self::send(&self.workers[self.shard_of(key)], Msg::Query(*key, tx));
        rx.recv().expect("shard worker exited")
    }

    /// Barrier across all shards; the merged report is sorted by key.
    pub fn end_epoch(&mut self, keys: &[FlowKey]) -> EpochReport {
        self.flush_pending();
        let mut per_shard: Vec<Vec<FlowKey>> = vec![Vec::new(); self.workers.len()];
        for k in keys {
            per_shard[self.shard_of(k)].push(*k);
        }
        let replies: Vec<_> = self
            .workers
            .iter()
            .zip(per_shard)
            .map(|(w, ks)| {
                let (tx, rx) = bounded(1);
                Self::send(w, Msg::EndEpoch(ks, tx));
                rx
            })
            .collect();

        let mut merged = EpochReport {
            epoch: self.epoch,
            entries: Vec::new(),
            stats: RegulationStats::default(),
            unattributed: (0.0, 0.0),
        };
        for rx in replies {
            let r = rx.recv().expect("shard worker exited");
            merged.entries.extend(r.entries);
            merged.stats.merge(&r.stats);
            merged.unattributed.0 += r.unattributed.0;
            merged.unattributed.1 += r.unattributed.1;
        }
        merged.entries.sort_unstable_by_key(|e| e.key);
        self.epoch += 1;
        merged
    }

    pub fn set_epoch(&mut self, epoch: u64) {
        self.flush_pending();
        self.epoch = epoch;
        for w in &self.workers {
            Self::send(w, Msg::SetEpoch(epoch));
        }
    }
}

impl PacketSink for ShardedPipeline {
    fn process_packet(&mut self, rec: &TraceRecord) -> Result<()> {
        ShardedPipeline::process_packet(self, rec)
    }

    fn end_epoch(&mut self, keys: &[FlowKey]) -> EpochReport {
        ShardedPipeline::end_epoch(self, keys)
    }

    fn set_epoch(&mut self, epoch: u64) {
        ShardedPipeline::set_epoch(self, epoch)
    }
}

impl Drop for ShardedPipeline {
    fn drop(&mut self) {
        for w in &mut self.workers {
            // Closing the channel ends the worker loop.
            let (dead, _) = bounded(0);
            drop(std::mem::replace(&mut w.tx, dead));
            if let Some(h) = w.handle.take() {
                let _ = h.join();
            }
        }
    }
}
