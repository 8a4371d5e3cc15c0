//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. All seeds are fixed.

use std::collections::HashSet;
use std::fs;
use std::net::Ipv4Addr;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use flowreg::analytics::{detect_heavy_hitters, size_class_errors, FlowEstimates, Metric};
use flowreg::sketch::Layering;
use flowreg::trace::pcap::build_frame;
use flowreg::trace::{
    generate_trace, GeneratedTrace, GeneratorConfig, PcapReader, PcapWriter, PlantedClass,
};
use flowreg::{
    coupon_estimate, run_trace, Attribution, FlowKey, OracleTable, Pipeline, PipelineConfig,
    RegulationStats, SketchParams, TraceRecord, TwoLayerSketch,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRACE_SEED: u64 = 2024;
const PIPELINE_SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_estimator() -> Outcome {
    const TRIALS: u32 = 1_000_000;
    let ks = [8u32, 24, 48, 64];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut sums = [0u64; 4];
    for _ in 0..TRIALS {
        let (mut seen, mut distinct, mut draws, mut next) = (0u64, 0u32, 0u64, 0);
        while next < ks.len() {
            let bit = 1u64 << rng.random_range(0..64u32);
            draws += 1;
            if seen & bit == 0 {
                seen |= bit;
                distinct += 1;
                if distinct == ks[next] {
                    sums[next] += draws;
                    next += 1;
                }
            }
        }
    }
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, &k) in ks.iter().enumerate() {
        let mc = sums[i] as f64 / f64::from(TRIALS);
        let exact = coupon_estimate(64, k).unwrap();
        let rel = (exact / mc - 1.0).abs();
        worst = worst.max(rel);
        parts.push(format!("k={k} {exact:.3}/{mc:.3}"));
    }
    outcome(
        worst <= 0.005,
        format!(
            "estimate/Monte-Carlo ({}): max rel err {:.3}% (tol 0.5%)",
            parts.join(", "),
            100.0 * worst
        ),
    )
}

fn c2_retention() -> Outcome {
    let key = FlowKey::new(
        Ipv4Addr::new(10, 0, 0, 1),
        Ipv4Addr::new(10, 0, 0, 2),
        1,
        2,
        6,
    );
    let seeds = 1_000u64;
    let mut total = 0u64;
    for seed in 0..seeds {
        let mut s = TwoLayerSketch::new(SketchParams::with_seed(seed)).unwrap();
        let mut n = 0u64;
        loop {
            n += 1;
            if !s.increment(&key, 1).is_empty() {
                break;
            }
        }
        total += n;
    }
    let mean = total as f64 / seeds as f64;
    let target = 7_611.0;
    outcome(
        (mean / target - 1.0).abs() <= 0.05,
        format!(
            "mean increments to first flush {mean:.1} over {seeds} seeds vs C1*C2 = {:.1} (tol 5% of {target})",
            TwoLayerSketch::new(SketchParams::default()).unwrap().flush_amount()
        ),
    )
}

struct Run {
    est: FlowEstimates,
    stats: RegulationStats,
}

fn measure(g: &GeneratedTrace, layering: Layering) -> Run {
    let cfg = PipelineConfig::with_seed(PIPELINE_SEED).map_sketches(|p| p.layering = layering);
    let mut p = Pipeline::new(cfg).unwrap();
    let keys: HashSet<FlowKey> = g.oracle.iter().map(|(k, _)| *k).collect();
    let out = run_trace(
        &mut p,
        g.records.iter().copied().map(Ok),
        0,
        &Attribution::KnownKeys(keys),
    )
    .unwrap();
    assert_eq!(out.reports.len(), 1);
    Run {
        est: FlowEstimates::from_reports(&out.reports),
        stats: out.reports[0].stats,
    }
}

fn zipf_trace() -> GeneratedTrace {
    generate_trace(&GeneratorConfig {
        n_flows: 100_000,
        n_packets: 1_000_000,
        zipf_alpha: 1.0,
        seed: TRACE_SEED,
        ..Default::default()
    })
    .unwrap()
}

fn c3_regulation(g: &GeneratedTrace, two: &Run) -> Outcome {
    let single = measure(g, Layering::SingleLayer);
    let (r2, r1) = (two.stats.regulation_rate(), single.stats.regulation_rate());
    let ratio = r1 / r2;
    outcome(
        r2 <= 0.02 && ratio >= 10.0,
        format!(
            "two-layer rate {:.4}% (tol 2%), single-layer ablation {:.3}%, ratio {ratio:.1}x (need >= 10x)",
            100.0 * r2,
            100.0 * r1
        ),
    )
}

fn restricted(oracle: &OracleTable, keys: &[FlowKey]) -> OracleTable {
    let mut t = OracleTable::default();
    for k in keys {
        t.insert(*k, oracle.get(k).unwrap());
    }
    t
}

fn c4_size_classes() -> Outcome {
    let g = generate_trace(&GeneratorConfig {
        n_flows: 100_000,
        n_packets: 2_500_000,
        zipf_alpha: 1.0,
        planted: vec![
            PlantedClass {
                size: 10_000,
                count: 50,
            },
            PlantedClass {
                size: 100_000,
                count: 10,
            },
        ],
        seed: TRACE_SEED,
        ..Default::default()
    })
    .unwrap();
    let run = measure(&g, Layering::TwoLayer);
    let rmse = |oracle: &OracleTable, bound: f64, m: Metric| {
        size_class_errors(&run.est, oracle, &[bound], m)[0]
            .rel_rmse_pct
            .unwrap_or(f64::NAN)
    };
    let p10k = rmse(
        &restricted(&g.oracle, &g.planted_keys[0]),
        10_000.0,
        Metric::Packets,
    );
    let p100k = rmse(
        &restricted(&g.oracle, &g.planted_keys[1]),
        100_000.0,
        Metric::Packets,
    );
    let b10m = size_class_errors(&run.est, &g.oracle, &[1e7], Metric::Bytes)[0].clone();
    let b = b10m.rel_rmse_pct.unwrap_or(f64::NAN);
    outcome(
        p10k <= 5.0 && p100k <= 3.0 && b <= 7.0,
        format!(
            "planted 50x10K packets {p10k:.2}% (tol 5%), planted 10x100K packets {p100k:.2}% (tol 3%), \
             bytes 10MB+ ({} flows) {b:.2}% (tol 7%)",
            b10m.n_flows
        ),
    )
}

fn c5_heavy_hitters(g: &GeneratedTrace, two: &Run) -> Outcome {
    let p = detect_heavy_hitters(&two.est, &g.oracle, 1_000.0, Metric::Packets).unwrap();
    let b = detect_heavy_hitters(&two.est, &g.oracle, 1e6, Metric::Bytes).unwrap();
    let pass = [p.fpr, p.fnr, b.fpr, b.fnr].iter().all(|&r| r <= 0.01);
    outcome(
        pass,
        format!(
            "packets >= 1000: fpr {:.2}% fnr {:.2}% ({} actual); bytes >= 1MB: fpr {:.2}% fnr {:.2}% ({} actual) (tol 1%)",
            100.0 * p.fpr,
            100.0 * p.fnr,
            p.actual.len(),
            100.0 * b.fpr,
            100.0 * b.fnr,
            b.actual.len()
        ),
    )
}

fn c6_conservation(g: &GeneratedTrace, two: &Run) -> Outcome {
    let pk = two.est.total_over(&g.oracle, Metric::Packets) / g.oracle.total_packets() as f64 - 1.0;
    let by = two.est.total_over(&g.oracle, Metric::Bytes) / g.oracle.total_bytes() as f64 - 1.0;
    outcome(
        pk.abs() <= 0.05 && by.abs() <= 0.07,
        format!(
            "packet total {:+.3}% (tol 5%), byte total {:+.3}% (tol 7%)",
            100.0 * pk,
            100.0 * by
        ),
    )
}

fn c7_mice() -> Outcome {
    let key = FlowKey::new(
        Ipv4Addr::new(192, 0, 2, 1),
        Ipv4Addr::new(198, 51, 100, 7),
        4242,
        80,
        6,
    );
    let mut worst = 0;
    for seed in 0..100 {
        let mut p = Pipeline::new(PipelineConfig::with_seed(seed)).unwrap();
        for i in 0..47 {
            p.process_packet(&TraceRecord {
                ts_us: i,
                key,
                wire_len: 1_500,
            })
            .unwrap();
        }
        worst = worst.max(p.stats().wsaf_ops);
    }
    outcome(
        worst == 0,
        format!("47-packet flow, 100 seeds: max WSAF ops {worst} (need 0)"),
    )
}

fn cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_flowreg"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn c8_determinism_and_format() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut ok = true;
    // Two independent runs of the same commands in sibling directories.
    for tag in ["a", "b"] {
        let w = d.join(tag);
        fs::create_dir(&w).unwrap();
        ok &= cli(
            &w,
            &[
                "generate",
                "--flows",
                "20000",
                "--packets",
                "200000",
                "--plant",
                "10000x5",
                "--seed",
                "31",
                "--format",
                "pcap",
                "--out",
                "t.pcap",
            ],
        );
        ok &= cli(
            &w,
            &[
                "run",
                "--in",
                "t.pcap",
                "--oracle",
                "t.oracle.csv",
                "--seed",
                "17",
                "--epoch",
                "0",
                "--out-dir",
                "out",
            ],
        );
        ok &= cli(
            &w,
            &[
                "evaluate",
                "--report",
                "out/report.csv",
                "--oracle",
                "t.oracle.csv",
                "--out",
                "out/classes.csv",
            ],
        );
        ok &= cli(
            &w,
            &[
                "heavy-hitters",
                "--report",
                "out/report.csv",
                "--oracle",
                "t.oracle.csv",
                "--out",
                "out/hh.csv",
                "--sets",
                "out/hh_sets.csv",
            ],
        );
    }
    let read = |p: &str| fs::read(d.join(p)).ok();
    let files = [
        "t.pcap",
        "t.oracle.csv",
        "out/manifest.txt",
        "out/report.csv",
        "out/regulation.csv",
        "out/classes.csv",
        "out/hh.csv",
        "out/hh_sets.csv",
    ];
    let identical = files.iter().all(|f| {
        let x = read(&format!("a/{f}"));
        x.is_some() && x == read(&format!("b/{f}"))
    });
    let rerun = cli(
        &d.join("a"),
        &[
            "run",
            "--manifest",
            "out/manifest.txt",
            "--out-dir",
            "replay",
        ],
    ) && ["manifest.txt", "report.csv", "regulation.csv"]
        .iter()
        .all(|f| read(&format!("a/out/{f}")) == read(&format!("a/replay/{f}")));

    // Writer -> reader round trip, both byte orders.
    let g = generate_trace(&GeneratorConfig {
        n_flows: 5_000,
        n_packets: 50_000,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let mut round_trip = true;
    for big_endian in [false, true] {
        let mut w = PcapWriter::with_byte_order(Vec::new(), big_endian).unwrap();
        for r in &g.records {
            w.write_record(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        let back: Result<Vec<TraceRecord>, _> = PcapReader::new(&bytes[..]).unwrap().collect();
        round_trip &= back.map(|b| b == g.records).unwrap_or(false);
    }

    // IPv6 and non-L4 frames are counted, never emitted.
    let key = FlowKey::new(
        Ipv4Addr::new(1, 2, 3, 4),
        Ipv4Addr::new(5, 6, 7, 8),
        10,
        20,
        6,
    );
    let ipv4 = build_frame(&key, 100);
    let mut v6 = ipv4.clone();
    v6[12..14].copy_from_slice(&0x86ddu16.to_be_bytes());
    let mut gre = ipv4.clone();
    gre[14 + 9] = 47;
    let mut w = PcapWriter::new(Vec::new()).unwrap();
    w.write_frame(1, &v6, 100).unwrap();
    w.write_frame(2, &gre, 100).unwrap();
    w.write_frame(3, &ipv4, 100).unwrap();
    let bytes = w.finish().unwrap();
    let mut rdr = PcapReader::new(&bytes[..]).unwrap();
    let emitted: Vec<TraceRecord> = rdr.by_ref().collect::<Result<_, _>>().unwrap();
    let s = rdr.stats();
    let skips =
        emitted.len() == 1 && emitted[0].key == key && s.skip_ipv6 == 1 && s.skip_non_l4 == 1;

    outcome(
        ok && identical && rerun && round_trip && skips,
        format!(
            "cli pipeline ok {ok}, {} files byte-identical across runs {identical}, manifest replay {rerun}, \
             pcap round trip {round_trip}, ipv6/non-L4 skip-counted {skips}",
            files.len()
        ),
    )
}

fn single_flow_conservation() -> Outcome {
    let key = FlowKey::new(
        Ipv4Addr::new(10, 9, 8, 7),
        Ipv4Addr::new(10, 0, 0, 1),
        7,
        9,
        17,
    );
    let n = 5_000u32;
    let ratios: Vec<f64> = (0..1_000u64)
        .map(|seed| {
            let mut s = TwoLayerSketch::new(SketchParams::with_seed(seed)).unwrap();
            let mut flushed = 0.0;
            for _ in 0..n {
                flushed += s.increment(&key, 1).iter().map(|f| f.amount).sum::<f64>();
            }
            (flushed + s.decode_residue(&key)) / f64::from(n)
        })
        .collect();
    let len = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / len;
    let rse = (ratios.iter().map(|r| (r - 1.0).powi(2)).sum::<f64>() / len).sqrt();
    outcome(
        (0.99..=1.01).contains(&mean) && rse <= 0.05,
        format!(
            "mean estimate/N {mean:.4} (need [0.99, 1.01]), relative error {:.2}% (tol 5%)",
            100.0 * rse
        ),
    )
}

fn report(id: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let took = t.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let pass = o.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs()));
    println!(
        "{} {id}: {} [{:.1}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64()
    );
    pass
}

fn main() -> ExitCode {
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    let mut all = true;
    all &= report(
        "criterion 1 (estimator vs Monte-Carlo)",
        min(1),
        c1_estimator,
    );
    all &= report("criterion 2 (retention capacity)", min(1), c2_retention);

    let started = Instant::now();
    let g = zipf_trace();
    let two = measure(&g, Layering::TwoLayer);
    let shared = started.elapsed();
    // The shared trace and two-layer run count toward each criterion's budget.
    let left = |m: u64| min(m).map(|d| d.saturating_sub(shared));
    all &= report("criterion 3 (regulation rate)", left(2), || {
        c3_regulation(&g, &two)
    });
    all &= report("criterion 4 (size-class accuracy)", min(5), c4_size_classes);
    all &= report("criterion 5 (heavy hitters)", left(2), || {
        c5_heavy_hitters(&g, &two)
    });
    all &= report("criterion 6 (conservation)", None, || {
        c6_conservation(&g, &two)
    });
    all &= report("criterion 7 (mice retention)", None, c7_mice);
    all &= report(
        "criterion 8 (determinism and format)",
        None,
        c8_determinism_and_format,
    );
    all &= report(
        "property (single-flow conservation, N=5000, 1000 seeds)",
        None,
        single_flow_conservation,
    );

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
