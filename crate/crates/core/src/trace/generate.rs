//! Seeded synthetic traces: Zipf-sized background flows plus planted flows of
//! exact size, interleaved uniformly at one packet per microsecond.

use std::collections::HashSet;
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use super::{FlowTotals, OracleTable, TraceRecord};
use crate::error::{Error, Result};
use crate::key::{FlowKey, PROTO_TCP, PROTO_UDP};

/// Timestamp of the first generated packet (2020-09-13T12:26:40Z).
pub const BASE_TS_US: u64 = 1_600_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedClass {
    /// Packets per planted flow.
    pub size: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Background flows whose sizes follow the Zipf law.
    pub n_flows: usize,
    /// Total packets, planted flows included.
    pub n_packets: u64,
    pub zipf_alpha: f64,
    pub planted: Vec<PlantedClass>,
    pub seed: u64,
    /// Packet lengths are uniform in `[40, 2 * mean_pkt_len - 40]`.
    pub mean_pkt_len: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_flows: 100_000,
            n_packets: 1_000_000,
            zipf_alpha: 1.0,
            planted: Vec::new(),
            seed: 1,
            mean_pkt_len: 700,
        }
    }
}

impl GeneratorConfig {
    fn planted_packets(&self) -> Option<u64> {
        self.planted.iter().try_fold(0u64, |acc, c| {
            acc.checked_add(c.size.checked_mul(c.count as u64)?)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_flows == 0 {
            return Err(Error::InvalidParams("need at least one flow".into()));
        }
        if self.n_packets < self.n_flows as u64 {
            return Err(Error::InvalidParams(format!(
                "n_packets ({}) must be at least n_flows ({})",
                self.n_packets, self.n_flows
            )));
        }
        if !(self.zipf_alpha >= 0.0 && self.zipf_alpha.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "bad zipf alpha {}",
                self.zipf_alpha
            )));
        }
        if self.mean_pkt_len < 40 || 2 * u64::from(self.mean_pkt_len) - 40 > 65_535 {
            return Err(Error::InvalidParams(format!(
                "mean packet length {} outside [40, 32787]",
                self.mean_pkt_len
            )));
        }
        if self.planted.iter().any(|c| c.size == 0 || c.count == 0) {
            return Err(Error::InvalidParams(
                "planted classes need size and count ≥ 1".into(),
            ));
        }
        match self.planted_packets() {
            Some(p) if p <= self.n_packets => Ok(()),
            _ => Err(Error::InvalidParams(format!(
                "planted flows exceed the {} packet budget",
                self.n_packets
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedTrace {
    pub records: Vec<TraceRecord>,
    /// Per-flow totals tallied while emitting, independent of [`super::build_oracle`].
    pub oracle: OracleTable,
    /// Keys of the planted flows, per class in input order.
    pub planted_keys: Vec<Vec<FlowKey>>,
}

fn random_key(rng: &mut ChaCha8Rng) -> FlowKey {
    FlowKey {
        src_addr: Ipv4Addr::from(rng.random::<u32>()),
        dst_addr: Ipv4Addr::from(rng.random::<u32>()),
        src_port: rng.random_range(1024..=u16::MAX),
        dst_port: rng.random(),
        protocol: if rng.random_bool(0.8) {
            PROTO_TCP
        } else {
            PROTO_UDP
        },
    }
}

pub fn generate_trace(cfg: &GeneratorConfig) -> Result<GeneratedTrace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let planted_flows: usize = cfg.planted.iter().map(|c| c.count).sum();
    let total_flows = cfg.n_flows + planted_flows;
    let mut seen = HashSet::with_capacity(total_flows);
    let mut keys = Vec::with_capacity(total_flows);
    while keys.len() < total_flows {
        let k = random_key(&mut rng);
        if seen.insert(k) {
            keys.push(k);
        }
    }

    let background = cfg.n_packets - cfg.planted_packets().expect("validated");
    let mut flow_of_packet: Vec<u32> = Vec::with_capacity(cfg.n_packets as usize);
    // Rank r (1-based) is background flow r - 1.
    let zipf = Zipf::new(cfg.n_flows as f64, cfg.zipf_alpha)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    for _ in 0..background {
        let rank = zipf.sample(&mut rng) as usize;
        flow_of_packet.push((rank.clamp(1, cfg.n_flows) - 1) as u32);
    }
    let mut planted_keys = Vec::with_capacity(cfg.planted.len());
    let mut next = cfg.n_flows;
    for class in &cfg.planted {
        planted_keys.push(keys[next..next + class.count].to_vec());
        for f in next..next + class.count {
            flow_of_packet.extend(std::iter::repeat_n(f as u32, class.size as usize));
        }
        next += class.count;
    }
    flow_of_packet.shuffle(&mut rng);

    let max_len = 2 * cfg.mean_pkt_len - 40;
    let mut tally = vec![FlowTotals::default(); total_flows];
    let records = flow_of_packet
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let wire_len = rng.random_range(40..=max_len);
            let t = &mut tally[f as usize];
            t.packets += 1;
            t.bytes += u64::from(wire_len);
            TraceRecord {
                ts_us: BASE_TS_US + i as u64,
                key: keys[f as usize],
                wire_len,
            }
        })
        .collect();

    let mut oracle = OracleTable::default();
    for (k, t) in keys.iter().zip(&tally) {
        if t.packets > 0 {
            oracle.insert(*k, *t);
        }
    }
    Ok(GeneratedTrace {
        records,
        oracle,
        planted_keys,
    })
}
