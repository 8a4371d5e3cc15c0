use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowreg::analytics::{
    detect_heavy_hitters, regulation_series, size_class_errors, write_heavy_hitter_sets,
    write_heavy_hitter_summary, write_regulation, write_size_classes, FlowEstimates, Metric,
};
use flowreg::report::{read_digest, read_report_file, write_report_file};
use flowreg::sketch::Layering;
use flowreg::trace::{generate_trace, write_trace, GeneratorConfig, TraceFormat, TraceSource};
use flowreg::{
    run_trace, Attribution, Error, FlowKey, OracleTable, PacketSink, Pipeline, PipelineConfig,
    Result, RunOutput, ShardedPipeline, TraceRecord,
};

use crate::args::{
    BenchArgs, EvaluateArgs, Format, GenerateArgs, HeavyHitterArgs, MetricArg, RunArgs, SketchArgs,
};
use crate::manifest::{sha256_file, RunManifest, MANIFEST_FILE, REGULATION_FILE, REPORT_FILE};

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Prefixes I/O errors with the path they concern.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

fn metrics(m: MetricArg) -> Vec<Metric> {
    match m {
        MetricArg::Packets => vec![Metric::Packets],
        MetricArg::Bytes => vec![Metric::Bytes],
        MetricArg::Both => vec![Metric::Packets, Metric::Bytes],
    }
}

pub fn pipeline_config(s: &SketchArgs, shards: usize, epoch: u64) -> PipelineConfig {
    let layering = if s.single_layer {
        Layering::SingleLayer
    } else {
        Layering::TwoLayer
    };
    let mut cfg = PipelineConfig::with_seed(s.seed).map_sketches(|p| {
        p.b1 = s.b1;
        p.b2 = s.b2;
        p.sat_frac = s.sat;
        p.blocks1 = s.blocks1;
        p.blocks2 = s.blocks2;
        p.layering = layering;
    });
    cfg.byte_unit = s.byte_unit;
    cfg.epoch_len_s = epoch;
    cfg.shards = shards;
    cfg.wsaf_initial_capacity = s.wsaf_capacity;
    cfg.wsaf_hard_capacity = s.wsaf_hard_capacity;
    cfg
}

fn default_oracle_path(out: &Path) -> PathBuf {
    out.with_extension("oracle.csv")
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = GeneratorConfig {
        n_flows: a.flows,
        n_packets: a.packets,
        zipf_alpha: a.zipf_alpha,
        planted: a.plant,
        seed: a.seed,
        mean_pkt_len: a.mean_len,
    };
    let g = generate_trace(&cfg)?;
    let format = match a.format {
        Format::Csv => TraceFormat::Csv,
        Format::Pcap => TraceFormat::Pcap,
    };
    write_trace(&a.out, format, &g.records)?;
    let oracle_path = a.oracle.unwrap_or_else(|| default_oracle_path(&a.out));
    g.oracle.write_csv(&oracle_path)?;

    let planted: usize = g.planted_keys.iter().map(Vec::len).sum();
    println!("trace: {}", a.out.display());
    println!("oracle: {}", oracle_path.display());
    println!("packets: {}", g.oracle.total_packets());
    println!("bytes: {}", g.oracle.total_bytes());
    println!("flows: {} ({planted} planted)", g.oracle.len());
    Ok(())
}

fn run_sink(
    cfg: &PipelineConfig,
    src: &mut TraceSource,
    attribution: &Attribution,
) -> Result<RunOutput> {
    if cfg.shards > 1 {
        run_trace(
            &mut ShardedPipeline::new(cfg.clone())?,
            src,
            cfg.epoch_len_s,
            attribution,
        )
    } else {
        run_trace(
            &mut Pipeline::new(cfg.clone())?,
            src,
            cfg.epoch_len_s,
            attribution,
        )
    }
}

pub fn run(a: RunArgs) -> Result<()> {
    let manifest = match &a.manifest {
        Some(path) => {
            let m = at(path, RunManifest::read(path))?;
            let recorded = [
                (Some(&m.input), Some(&m.input_sha256)),
                (m.oracle.as_ref(), m.oracle_sha256.as_ref()),
            ];
            for (file, sha) in recorded {
                if let (Some(file), Some(sha)) = (file, sha) {
                    if &at(file, sha256_file(file))? != sha {
                        return Err(Error::malformed(
                            file.display().to_string(),
                            "file digest differs from the manifest",
                        ));
                    }
                }
            }
            m
        }
        None => {
            let input = a
                .input
                .clone()
                .expect("clap enforces --in without --manifest");
            let oracle_sha256 = a
                .oracle
                .as_deref()
                .map(|p| at(p, sha256_file(p)))
                .transpose()?;
            RunManifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                input_sha256: at(&input, sha256_file(&input))?,
                input,
                oracle: a.oracle.clone(),
                oracle_sha256,
                config: pipeline_config(&a.sketch, a.shards, a.epoch),
            }
        }
    };
    let cfg = &manifest.config;
    cfg.validate()?;

    let attribution = match &manifest.oracle {
        Some(p) => {
            let oracle = at(p, OracleTable::read_csv(p))?;
            Attribution::KnownKeys(oracle.iter().map(|(k, _)| *k).collect::<HashSet<FlowKey>>())
        }
        None => Attribution::WsafKeys,
    };

    let mut src = at(&manifest.input, TraceSource::open(&manifest.input))?;
    let started = Instant::now();
    let out = run_sink(cfg, &mut src, &attribution)?;
    let elapsed = started.elapsed().as_secs_f64();

    fs::create_dir_all(&a.out_dir)?;
    let digest = manifest.digest();
    write_report_file(a.out_dir.join(REPORT_FILE), &out.reports, Some(&digest))?;
    let rows = regulation_series(out.reports.iter().map(|r| (r.epoch, &r.stats)));
    write_regulation(
        BufWriter::new(File::create(a.out_dir.join(REGULATION_FILE))?),
        &rows,
        Some(&digest),
    )?;
    fs::write(a.out_dir.join(MANIFEST_FILE), manifest.to_text())?;

    let packets: u64 = out.reports.iter().map(|r| r.stats.packets_in).sum();
    let ops: u64 = out.reports.iter().map(|r| r.stats.wsaf_ops).sum();
    let dropped: u64 = out.reports.iter().map(|r| r.stats.dropped_flushes).sum();
    let flows: usize = out.reports.iter().map(|r| r.entries.len()).sum();
    println!("packets: {packets}");
    println!("epochs: {}", out.reports.len());
    println!("report_rows: {flows}");
    println!("wsaf_ops: {ops}");
    println!(
        "regulation_rate: {}",
        if packets > 0 {
            ops as f64 / packets as f64
        } else {
            0.0
        }
    );
    println!("dropped_flushes: {dropped}");
    println!("sketch_memory_bytes: {}", cfg.sketch_memory_bytes());
    if let Some(s) = src.pcap_stats() {
        println!(
            "pcap_skipped: {} (ipv6 {}, non-ipv4 {}, fragment {}, non-l4 {}, malformed {})",
            s.skipped(),
            s.skip_ipv6,
            s.skip_non_ipv4,
            s.skip_fragment,
            s.skip_non_l4,
            s.skip_malformed
        );
        if s.truncated > 0 {
            eprintln!(
                "warning: trace ended with {} truncated record(s)",
                s.truncated
            );
        }
        if s.ts_regressions > 0 {
            eprintln!(
                "warning: {} timestamp regression(s) in trace",
                s.ts_regressions
            );
        }
    }
    println!("elapsed_s: {elapsed:.3}");
    println!("manifest_sha256: {digest}");
    Ok(())
}

fn load_estimates(report: &Path) -> Result<(FlowEstimates, Option<String>)> {
    let digest = at(
        report,
        File::open(report)
            .map_err(Error::from)
            .and_then(read_digest),
    )?;
    let rows = at(report, read_report_file(report))?;
    Ok((FlowEstimates::from_rows(&rows), digest))
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (est, digest) = load_estimates(&a.report)?;
    let oracle = at(&a.oracle, OracleTable::read_csv(&a.oracle))?;
    let mut stats = Vec::new();
    for m in metrics(a.metric) {
        let bounds = match m {
            Metric::Packets => &a.packet_bounds,
            Metric::Bytes => &a.byte_bounds,
        };
        if let Some(lo) = bounds.iter().copied().reduce(f64::min) {
            let missing = oracle
                .iter()
                .filter(|(k, t)| {
                    let v = if m == Metric::Packets {
                        t.packets
                    } else {
                        t.bytes
                    };
                    v as f64 >= lo && !est.contains(k)
                })
                .count();
            if missing > 0 {
                eprintln!("warning: {missing} {m} flow(s) at or above {lo} missing from the report; counted as 0");
            }
        }
        stats.extend(size_class_errors(&est, &oracle, bounds, m));
    }
    write_size_classes(output(a.out.as_deref())?, &stats, digest.as_deref())
}

pub fn heavy_hitters(a: HeavyHitterArgs) -> Result<()> {
    let (est, digest) = load_estimates(&a.report)?;
    let oracle = at(&a.oracle, OracleTable::read_csv(&a.oracle))?;
    let reports = metrics(a.metric)
        .into_iter()
        .map(|m| {
            let t = if m == Metric::Packets {
                a.packet_threshold
            } else {
                a.byte_threshold
            };
            detect_heavy_hitters(&est, &oracle, t, m)
        })
        .collect::<Result<Vec<_>>>()?;
    write_heavy_hitter_summary(output(a.out.as_deref())?, &reports, digest.as_deref())?;
    if let Some(p) = &a.sets {
        write_heavy_hitter_sets(
            BufWriter::new(File::create(p)?),
            &reports,
            digest.as_deref(),
        )?;
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let records: Vec<TraceRecord> = match &a.input {
        Some(p) => at(p, TraceSource::open(p))?.collect::<Result<_>>()?,
        None => {
            generate_trace(&GeneratorConfig {
                n_flows: a.flows,
                n_packets: a.packets,
                seed: a.trace_seed,
                ..Default::default()
            })?
            .records
        }
    };
    if a.repeat == 0 {
        return Err(Error::InvalidParams("--repeat must be at least 1".into()));
    }
    println!("shards,packets,best_s,mpps,regulation_rate");
    for &shards in &a.shards {
        let cfg = pipeline_config(&a.sketch, shards, 0);
        cfg.validate()?;
        let mut best = f64::INFINITY;
        let mut rate = 0.0;
        for _ in 0..a.repeat {
            let mut sink: Box<dyn PacketSink> = if shards > 1 {
                Box::new(ShardedPipeline::new(cfg.clone())?)
            } else {
                Box::new(Pipeline::new(cfg.clone())?)
            };
            let t = Instant::now();
            for r in &records {
                sink.process_packet(r)?;
            }
            let rep = sink.end_epoch(&[]);
            best = best.min(t.elapsed().as_secs_f64());
            rate = rep.stats.regulation_rate();
        }
        println!(
            "{shards},{},{best:.4},{:.3},{rate}",
            records.len(),
            records.len() as f64 / best / 1e6
        );
    }
    Ok(())
}
