use std::collections::HashSet;
use std::net::Ipv4Addr;

use flowreg::analytics::{FlowEstimates, Metric};
use flowreg::report::write_report;
use flowreg::trace::{generate_trace, GeneratorConfig};
use flowreg::{
    run_trace, Attribution, FlowKey, Pipeline, PipelineConfig, ShardedPipeline, TraceRecord,
};

fn key() -> FlowKey {
    FlowKey::new(
        Ipv4Addr::new(10, 1, 2, 3),
        Ipv4Addr::new(172, 16, 0, 9),
        5555,
        443,
        6,
    )
}

fn stream(n: u64, len: u32) -> impl Iterator<Item = TraceRecord> {
    (0..n).map(move |i| TraceRecord {
        ts_us: i,
        key: key(),
        wire_len: len,
    })
}

#[test]
fn single_large_flow_online_query() {
    let mut p = Pipeline::new(PipelineConfig::with_seed(1)).unwrap();
    for r in stream(50_000, 1_000) {
        p.process_packet(&r).unwrap();
    }
    let (pk, by) = p.query_flow(&key());
    assert!((pk / 50_000.0 - 1.0).abs() <= 0.05, "packets {pk}");
    assert!((by / 5e7 - 1.0).abs() <= 0.07, "bytes {by}");
}

#[test]
fn query_matches_epoch_report_for_lone_flow() {
    let mut p = Pipeline::new(PipelineConfig::with_seed(2)).unwrap();
    for r in stream(12_345, 333) {
        p.process_packet(&r).unwrap();
    }
    let (pk, by) = p.query_flow(&key());
    let rep = p.end_epoch(&[key()]);
    assert_eq!(rep.entries.len(), 1);
    assert!((rep.entries[0].packets_est - pk).abs() < 1e-6);
    assert!((rep.entries[0].bytes_est - by).abs() < 1e-6);
    assert_eq!(p.query_flow(&key()), (0.0, 0.0));
}

#[test]
fn identical_packets_rarely_reach_the_table() {
    let mut p = Pipeline::new(PipelineConfig::with_seed(1)).unwrap();
    for r in stream(100_000, 64) {
        p.process_packet(&r).unwrap();
    }
    let s = p.stats();
    assert_eq!(s.packets_in, 100_000);
    assert!(s.regulation_rate() <= 0.001, "{}", s.regulation_rate());
}

#[test]
fn mice_never_touch_the_table() {
    for seed in 0..100 {
        let mut p = Pipeline::new(PipelineConfig::with_seed(seed)).unwrap();
        for r in stream(47, 1_500) {
            p.process_packet(&r).unwrap();
        }
        assert_eq!(p.stats().wsaf_ops, 0, "seed {seed}");
    }
}

#[test]
fn sparse_load_conserves_totals() {
    // 400 flows in 4096 layer-1 blocks: collisions are rare.
    let g = generate_trace(&GeneratorConfig {
        n_flows: 400,
        n_packets: 400_000,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let mut p = Pipeline::new(PipelineConfig::with_seed(5)).unwrap();
    let known: HashSet<FlowKey> = g.oracle.iter().map(|(k, _)| *k).collect();
    let out = run_trace(
        &mut p,
        g.records.iter().copied().map(Ok),
        0,
        &Attribution::KnownKeys(known),
    )
    .unwrap();
    let est = FlowEstimates::from_reports(&out.reports);
    let pk = est.total_over(&g.oracle, Metric::Packets) / g.oracle.total_packets() as f64;
    let by = est.total_over(&g.oracle, Metric::Bytes) / g.oracle.total_bytes() as f64;
    assert!((pk - 1.0).abs() <= 0.05, "packets ratio {pk}");
    assert!((by - 1.0).abs() <= 0.07, "bytes ratio {by}");
}

fn report_bytes(seed: u64, shards: usize) -> Vec<u8> {
    let g = generate_trace(&GeneratorConfig {
        n_flows: 2_000,
        n_packets: 60_000,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let cfg = PipelineConfig {
        shards,
        epoch_len_s: 0,
        ..PipelineConfig::with_seed(seed)
    };
    let keys: HashSet<FlowKey> = g.oracle.iter().map(|(k, _)| *k).collect();
    let mut sink = ShardedPipeline::new(cfg).unwrap();
    let out = run_trace(
        &mut sink,
        g.records.iter().copied().map(Ok),
        0,
        &Attribution::KnownKeys(keys),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_report(&mut buf, &out.reports, None).unwrap();
    buf
}

#[test]
fn reports_are_byte_identical_across_runs() {
    assert_eq!(report_bytes(3, 1), report_bytes(3, 1));
    assert_eq!(report_bytes(3, 4), report_bytes(3, 4));
    assert_ne!(report_bytes(3, 1), report_bytes(4, 1));
}

#[test]
fn sharded_pipeline_keeps_regulation_low() {
    let g = generate_trace(&GeneratorConfig {
        n_flows: 20_000,
        n_packets: 200_000,
        seed: 12,
        ..Default::default()
    })
    .unwrap();
    let cfg = PipelineConfig {
        shards: 4,
        ..PipelineConfig::with_seed(12)
    };
    let mut sink = ShardedPipeline::new(cfg).unwrap();
    let out = run_trace(
        &mut sink,
        g.records.iter().copied().map(Ok),
        0,
        &Attribution::WsafKeys,
    )
    .unwrap();
    let stats = &out.reports[0].stats;
    assert_eq!(stats.packets_in, 200_000);
    assert!(
        stats.regulation_rate() < 0.02,
        "{}",
        stats.regulation_rate()
    );
}
