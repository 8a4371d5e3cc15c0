use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowreg::trace::PlantedClass;

#[derive(Debug, Parser)]
#[command(
    name = "flowreg",
    version,
    about = "Per-flow traffic measurement with a two-layer saturating sketch"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Zipf trace and its exact oracle.
    Generate(GenerateArgs),
    /// Measure a trace; writes report, regulation series and manifest.
    Run(RunArgs),
    /// Per-size-class relative RMSE of a report against an oracle.
    Evaluate(EvaluateArgs),
    /// Heavy-hitter false positive / negative rates of a report.
    HeavyHitters(HeavyHitterArgs),
    /// Pipeline throughput on a trace file or a generated trace.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Pcap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Packets,
    Bytes,
    Both,
}

fn parse_plant(s: &str) -> Result<PlantedClass, String> {
    let (size, count) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected SIZExCOUNT, got {s:?}"))?;
    let size: u64 = size
        .trim()
        .parse()
        .map_err(|_| format!("bad size in {s:?}"))?;
    let count: usize = count
        .trim()
        .parse()
        .map_err(|_| format!("bad count in {s:?}"))?;
    if size == 0 || count == 0 {
        return Err(format!("size and count must be positive in {s:?}"));
    }
    Ok(PlantedClass { size, count })
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Background (Zipf) flows.
    #[arg(long, default_value_t = 100_000)]
    pub flows: usize,
    /// Total packets, planted flows included.
    #[arg(long, default_value_t = 1_000_000)]
    pub packets: u64,
    #[arg(long, default_value_t = 1.0)]
    pub zipf_alpha: f64,
    /// Planted flows of exact size, e.g. 10000x50. Repeatable.
    #[arg(long = "plant", value_name = "SIZExCOUNT", value_parser = parse_plant)]
    pub plant: Vec<PlantedClass>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Mean packet length; lengths are uniform in [40, 2*mean-40].
    #[arg(long, default_value_t = 700)]
    pub mean_len: u32,
    /// Trace output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Oracle output path [default: <out>.oracle.csv].
    #[arg(long)]
    pub oracle: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SketchArgs {
    #[arg(long, default_value_t = 64)]
    pub b1: u32,
    #[arg(long, default_value_t = 64)]
    pub b2: u32,
    /// Saturation fraction in (0, 1].
    #[arg(long, default_value_t = 0.75)]
    pub sat: f64,
    #[arg(long, default_value_t = 4096)]
    pub blocks1: usize,
    #[arg(long, default_value_t = 4096)]
    pub blocks2: usize,
    /// Bytes per byte-sketch increment.
    #[arg(long, default_value_t = 64)]
    pub byte_unit: u32,
    /// Bypass layer 2 and flush on every layer-1 saturation (ablation).
    #[arg(long)]
    pub single_layer: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = flowreg::wsaf::DEFAULT_INITIAL_CAPACITY)]
    pub wsaf_capacity: usize,
    #[arg(long, default_value_t = flowreg::wsaf::DEFAULT_HARD_CAPACITY)]
    pub wsaf_hard_capacity: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Trace file (pcap or CSV).
    #[arg(long = "in", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub sketch: SketchArgs,
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    /// Epoch length in seconds; 0 = one epoch for the whole trace.
    #[arg(long, default_value_t = 60)]
    pub epoch: u64,
    /// Oracle CSV; its keys receive attributed sketch residue.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Replay the configuration recorded in a previous run's manifest.
    #[arg(long, conflicts_with = "input")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub oracle: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Both)]
    pub metric: MetricArg,
    /// Packet size-class lower bounds.
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    pub packet_bounds: Vec<f64>,
    /// Byte size-class lower bounds.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1000000,10000000,100000000"
    )]
    pub byte_bounds: Vec<f64>,
    /// Output CSV [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeavyHitterArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub oracle: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Both)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 1000.0)]
    pub packet_threshold: f64,
    #[arg(long, default_value_t = 1_000_000.0)]
    pub byte_threshold: f64,
    /// Summary CSV [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the detected/actual key sets.
    #[arg(long)]
    pub sets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Trace file; a Zipf trace is generated when absent.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub flows: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub packets: u64,
    #[arg(long, default_value_t = 1)]
    pub trace_seed: u64,
    /// Shard counts to measure.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub shards: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[command(flatten)]
    pub sketch: SketchArgs,
}
