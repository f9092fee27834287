use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use notibus_bench::{emit_csv, run, run_latency, BenchConfig, BenchResult, Scenario};
use notibus_core::channel::Reliability;
use notibus_wire::{Broker, BrokerConfig};

#[derive(Parser, Debug)]
#[command(name = "notibus-bench", version, about = "Benchmarks a notibus broker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One supplier session sending from N concurrent contexts.
    Threads(RunArgs),
    /// N supplier sessions sharing the event budget.
    Suppliers(RunArgs),
    /// One supplier fanned out to N consumers.
    Consumers(RunArgs),
    /// Per-event round trip from push to arrival, one event at a time.
    Latency(LatencyArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Qos {
    Besteffort,
    Reliable,
}

impl From<Qos> for Reliability {
    fn from(q: Qos) -> Self {
        match q {
            Qos::Besteffort => Reliability::BestEffort,
            Qos::Reliable => Reliability::Reliable,
        }
    }
}

#[derive(clap::Args, Debug)]
struct BrokerArgs {
    #[arg(long, default_value = "127.0.0.1:4690")]
    broker: String,
    /// Start a private broker in this process instead of connecting to one.
    #[arg(long)]
    spawn_broker: bool,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    target: BrokerArgs,
    /// Comma-separated scale points; the scenario's defaults when omitted.
    #[arg(long, value_delimiter = ',')]
    scales: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    events: u64,
    #[arg(long, default_value_t = 64)]
    payload_bytes: usize,
    #[arg(long, value_enum, default_value_t = Qos::Besteffort)]
    qos: Qos,
    #[arg(long, default_value_t = 1_000)]
    warmup: u64,
    #[arg(long)]
    queue_limit: Option<usize>,
    #[arg(long, default_value_t = 60)]
    timeout_s: u64,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct LatencyArgs {
    #[command(flatten)]
    target: BrokerArgs,
    #[arg(long, default_value_t = 10_000)]
    events: usize,
    #[arg(long, default_value_t = 1_000)]
    warmup: usize,
    #[arg(long, default_value_t = 64)]
    payload_bytes: usize,
    #[arg(long, value_enum, default_value_t = Qos::Reliable)]
    qos: Qos,
}

/// Keeps a spawned broker and its data directory alive for the run.
struct Target {
    addr: SocketAddr,
    _local: Option<(notibus_wire::BrokerHandle, tempfile::TempDir)>,
}

async fn target(args: &BrokerArgs) -> anyhow::Result<Target> {
    if args.spawn_broker {
        let dir = tempfile::tempdir()?;
        let broker = Broker::bind(&BrokerConfig::new("127.0.0.1:0", dir.path())).await?;
        let handle = broker.spawn();
        return Ok(Target {
            addr: handle.addr,
            _local: Some((handle, dir)),
        });
    }
    let addr = args
        .broker
        .to_socket_addrs()
        .with_context(|| format!("bad broker address `{}`", args.broker))?
        .next()
        .ok_or_else(|| anyhow!("`{}` resolves to nothing", args.broker))?;
    Ok(Target { addr, _local: None })
}

fn co_location_warning() {
    eprintln!(
        "warning: broker and clients share this machine; timings exclude network \
         latency and include process switching, so treat them as optimistic"
    );
}

async fn bench(scenario: Scenario, args: RunArgs) -> anyhow::Result<()> {
    let target = target(&args.target).await?;
    co_location_warning();
    let mut cfg = BenchConfig::new(target.addr, scenario);
    if !args.scales.is_empty() {
        cfg.scales = args.scales;
    }
    cfg.events_total = args.events;
    cfg.payload_bytes = args.payload_bytes;
    cfg.reliability = args.qos.into();
    cfg.warmup_events = args.warmup;
    cfg.queue_limit = args.queue_limit;
    cfg.timeout = Duration::from_secs(args.timeout_s);
    cfg.repeat = args.repeat;

    let mut rows: Vec<BenchResult> = Vec::new();
    let mut failed = false;
    for outcome in run(&cfg).await? {
        match outcome {
            Ok(r) => {
                eprintln!(
                    "{} scale={} sent={} delivered={} lost={} avg={}ns dup={} broker_discarded={}",
                    r.scenario,
                    r.scale,
                    r.events_sent,
                    r.events_delivered,
                    r.events_lost,
                    r.avg_per_event_ns,
                    r.duplicates,
                    r.broker_discarded
                );
                if cfg.reliability == Reliability::Reliable && (r.events_lost > 0 || r.duplicates > 0) {
                    eprintln!("error: reliable run lost or duplicated events");
                    failed = true;
                }
                if r.gaps_observed != r.broker_discarded {
                    eprintln!(
                        "error: consumers missed {} events but the broker discarded {}",
                        r.gaps_observed, r.broker_discarded
                    );
                    failed = true;
                }
                rows.push(r);
            }
            Err(e) => {
                eprintln!("error: {e}");
                failed = true;
            }
        }
    }
    match &args.csv {
        Some(path) => emit_csv(&rows, path).with_context(|| format!("writing {}", path.display()))?,
        None => notibus_bench::write_csv(&rows, std::io::stdout())?,
    }
    if failed {
        bail!("benchmark finished with failures");
    }
    Ok(())
}

async fn latency(args: LatencyArgs) -> anyhow::Result<()> {
    let target = target(&args.target).await?;
    co_location_warning();
    let r = run_latency(target.addr, args.events, args.warmup, args.payload_bytes, args.qos.into()).await?;
    println!(
        "samples={} median_ns={} p90_ns={} p99_ns={} max_ns={}",
        r.samples, r.median_ns, r.p90_ns, r.p99_ns, r.max_ns
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let result = rt.block_on(async {
        match cli.command {
            Command::Threads(a) => bench(Scenario::Threads, a).await,
            Command::Suppliers(a) => bench(Scenario::Suppliers, a).await,
            Command::Consumers(a) => bench(Scenario::Consumers, a).await,
            Command::Latency(a) => latency(a).await,
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("notibus-bench: {e:#}");
            ExitCode::FAILURE
        }
    }
}
