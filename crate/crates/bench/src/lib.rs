//! Benchmark harness: drives a running broker with supplier and consumer
//! sessions, counts every event end to end and reports timings.
//!
//! Each sending context tags its events with `(ctx, seq)`, so consumers can
//! tell lost events from duplicates. Warmup events are sent first, drained,
//! and excluded from every count and timing.

use std::fmt;
use std::net::SocketAddr;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use notibus_core::channel::{DiscardPolicy, QosProfile, Reliability};
use notibus_core::event::StructuredEvent;
use notibus_core::filter::Subscription;
use notibus_core::value::Value;
use notibus_wire::{Client, ClientError, ProxyStats, PushStatus};
use parking_lot::Mutex;
use thiserror::Error;
use tokio::task::JoinSet;

pub const CSV_HEADER: [&str; 8] = [
    "scenario",
    "scale",
    "events_sent",
    "events_delivered",
    "events_lost",
    "wall_time_ns",
    "avg_per_event_ns",
    "avg_per_event_per_consumer_ns",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// One supplier session sending from many concurrent contexts.
    Threads,
    /// Many supplier sessions sharing the event budget.
    Suppliers,
    /// One supplier fanned out to many consumers.
    Consumers,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Threads => "threads",
            Scenario::Suppliers => "suppliers",
            Scenario::Consumers => "consumers",
        }
    }

    pub fn default_scales(self) -> Vec<usize> {
        match self {
            Scenario::Threads => vec![1, 10, 30, 100],
            Scenario::Suppliers | Scenario::Consumers => vec![10, 20, 30, 40, 50],
        }
    }

    /// (supplier sessions, contexts per supplier, consumer sessions).
    fn layout(self, scale: usize) -> (usize, usize, usize) {
        match self {
            Scenario::Threads => (1, scale, 1),
            Scenario::Suppliers => (scale, 1, 1),
            Scenario::Consumers => (1, 1, scale),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "threads" => Ok(Scenario::Threads),
            "suppliers" => Ok(Scenario::Suppliers),
            "consumers" => Ok(Scenario::Consumers),
            _ => Err(format!("unknown scenario `{s}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub broker: SocketAddr,
    pub scenario: Scenario,
    pub scales: Vec<usize>,
    pub events_total: u64,
    pub payload_bytes: usize,
    pub reliability: Reliability,
    pub warmup_events: u64,
    /// Channel queue limit; the channel default when unset.
    pub queue_limit: Option<usize>,
    /// Per scale point.
    pub timeout: Duration,
    /// Runs per scale point; the run with the median wall time is reported.
    pub repeat: usize,
}

impl BenchConfig {
    pub fn new(broker: SocketAddr, scenario: Scenario) -> Self {
        BenchConfig {
            broker,
            scenario,
            scales: scenario.default_scales(),
            events_total: 100_000,
            payload_bytes: 64,
            reliability: Reliability::BestEffort,
            warmup_events: 1_000,
            queue_limit: None,
            timeout: Duration::from_secs(60),
            repeat: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchResult {
    pub scenario: Scenario,
    pub scale: usize,
    pub consumers: usize,
    pub events_sent: u64,
    pub events_delivered: u64,
    pub events_lost: u64,
    pub wall_time_ns: u64,
    pub avg_per_event_ns: u64,
    pub avg_per_event_per_consumer_ns: Option<u64>,
    /// Deliveries of an already seen `(ctx, seq)`.
    pub duplicates: u64,
    /// Expected `(ctx, seq)` pairs consumers never saw.
    pub gaps_observed: u64,
    /// Broker-side discards across all consumers during the timed phase.
    pub broker_discarded: u64,
}

impl BenchResult {
    pub fn expected_deliveries(&self) -> u64 {
        self.events_sent * self.consumers as u64
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("broker unreachable: {0}")]
    BrokerUnreachable(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{scenario} at scale {scale} timed out after {after:?}")]
    Timeout {
        scenario: Scenario,
        scale: usize,
        after: Duration,
    },
    #[error("scale points must be positive and ascending")]
    BadScales,
}

fn bench_event(ctx: usize, seq: u64, warmup: bool, sent_ns: u64, payload: &[u8]) -> StructuredEvent {
    StructuredEvent::new("bench", "tick")
        .with_field("ctx", ctx as i64)
        .with_field("seq", seq as i64)
        .with_field("warmup", warmup)
        .with_field("sent_ns", sent_ns as i64)
        .with_payload(Value::Bytes(payload.to_vec()))
}

#[derive(Default)]
struct Tally {
    /// Every delivery, warmup included.
    received: u64,
    unique: u64,
    duplicates: u64,
    /// Bit per `(ctx, seq)` of the timed phase.
    seen: Vec<Vec<bool>>,
    last_arrival_ns: u64,
}

impl Tally {
    fn record(&mut self, e: &StructuredEvent, now_ns: u64) {
        self.received += 1;
        if e.field("warmup") == Some(&Value::Bool(true)) {
            return;
        }
        let get = |k: &str| e.field(k).and_then(Value::as_int).map(|v| v as usize);
        let (Some(ctx), Some(seq)) = (get("ctx"), get("seq")) else {
            return;
        };
        let Some(slot) = self.seen.get_mut(ctx).and_then(|s| s.get_mut(seq)) else {
            self.duplicates += 1;
            return;
        };
        if *slot {
            self.duplicates += 1;
        } else {
            *slot = true;
            self.unique += 1;
        }
        self.last_arrival_ns = now_ns;
    }
}

struct ConsumerSide {
    client: Arc<Client>,
    proxy: u64,
    tally: Arc<Mutex<Tally>>,
}

/// Splits `total` across `parts` as evenly as possible.
fn shares(total: u64, parts: usize) -> Vec<u64> {
    let base = total / parts as u64;
    let extra = (total % parts as u64) as usize;
    (0..parts).map(|i| base + u64::from(i < extra)).collect()
}

async fn push_until_accepted(c: &Client, proxy: u64, e: &StructuredEvent) -> Result<(), ClientError> {
    while c.push(proxy, e).await? == PushStatus::Rejected {
        tokio::time::sleep(Duration::from_micros(200)).await;
    }
    Ok(())
}

/// Waits until every consumer queue is empty and each consumer has seen
/// everything the broker counts as delivered to it.
async fn quiesce(consumers: &[ConsumerSide], deadline: Instant) -> Result<Vec<ProxyStats>, ()> {
    loop {
        let mut all = Vec::with_capacity(consumers.len());
        let mut settled = true;
        for c in consumers {
            let s = c.client.stats(c.proxy).await.map_err(drop)?;
            settled &= s.queued == 0 && c.tally.lock().received >= s.delivered;
            all.push(s);
        }
        if settled {
            return Ok(all);
        }
        if Instant::now() >= deadline {
            return Err(());
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
}

/// One measurement at one scale point.
pub async fn run_once(cfg: &BenchConfig, scale: usize) -> Result<BenchResult, BenchError> {
    let (n_suppliers, contexts, n_consumers) = cfg.scenario.layout(scale);
    let started = Instant::now();
    let deadline = started + cfg.timeout;
    let timeout = || BenchError::Timeout {
        scenario: cfg.scenario,
        scale,
        after: cfg.timeout,
    };
    let connect = || async {
        Client::connect(cfg.broker)
            .await
            .map(Arc::new)
            .map_err(|e| BenchError::BrokerUnreachable(e.to_string()))
    };

    let admin = connect().await?;
    let mut qos = QosProfile::unset().reliability(cfg.reliability);
    if cfg.reliability == Reliability::Reliable {
        qos = qos.discard(DiscardPolicy::RejectNew);
    }
    if let Some(n) = cfg.queue_limit {
        qos = qos.queue_limit(n);
    }
    let channel = admin.create_channel(qos).await?;

    let n_contexts = n_suppliers * contexts;
    let per_context = shares(cfg.events_total, n_contexts);
    let base = Instant::now();
    let now_ns = move || base.elapsed().as_nanos() as u64;

    let mut consumers = Vec::new();
    let mut readers = JoinSet::new();
    for _ in 0..n_consumers {
        let client = connect().await?;
        let proxy = client
            .connect_consumer(channel, &Subscription::all(), None, QosProfile::unset())
            .await?;
        let tally = Arc::new(Mutex::new(Tally {
            seen: per_context.iter().map(|n| vec![false; *n as usize]).collect(),
            ..Tally::default()
        }));
        let mut stream = client.subscribe(proxy).await?;
        let (c, t) = (client.clone(), tally.clone());
        let reliable = cfg.reliability == Reliability::Reliable;
        readers.spawn(async move {
            while let Some(d) = stream.recv().await {
                let mut last = d.delivery_id;
                {
                    let mut tally = t.lock();
                    tally.record(&d.event, now_ns());
                    while let Ok(d) = stream.try_recv() {
                        tally.record(&d.event, now_ns());
                        last = d.delivery_id;
                    }
                }
                if reliable && c.ack_nowait(proxy, last).await.is_err() {
                    return;
                }
            }
        });
        consumers.push(ConsumerSide { client, proxy, tally });
    }

    let mut suppliers = Vec::new();
    for _ in 0..n_suppliers {
        let client = connect().await?;
        let proxy = client.connect_supplier(channel, QosProfile::unset()).await?;
        suppliers.push((client, proxy));
    }
    let payload = Arc::new(vec![0xa5u8; cfg.payload_bytes]);

    for seq in 0..cfg.warmup_events {
        let (c, p) = &suppliers[0];
        push_until_accepted(c, *p, &bench_event(0, seq, true, now_ns(), &payload)).await?;
    }
    let before = quiesce(&consumers, deadline).await.map_err(|_| timeout())?;

    let t0 = now_ns();
    let mut senders = JoinSet::new();
    for (s, (client, proxy)) in suppliers.iter().enumerate() {
        for k in 0..contexts {
            let ctx = s * contexts + k;
            let (client, proxy, payload, n) = (client.clone(), *proxy, payload.clone(), per_context[ctx]);
            senders.spawn(async move {
                for seq in 0..n {
                    push_until_accepted(&client, proxy, &bench_event(ctx, seq, false, now_ns(), &payload)).await?;
                }
                Ok::<_, ClientError>(())
            });
        }
    }
    let remaining = deadline.saturating_duration_since(Instant::now());
    let sending = async {
        while let Some(r) = senders.join_next().await {
            r.expect("sender task")?;
        }
        Ok::<_, ClientError>(())
    };
    match tokio::time::timeout(remaining, sending).await {
        Ok(r) => r?,
        Err(_) => return Err(timeout()),
    }
    let sent_done = now_ns();
    let after = quiesce(&consumers, deadline).await.map_err(|_| timeout())?;
    readers.abort_all();

    let events_sent = cfg.events_total;
    let mut delivered = 0;
    let mut duplicates = 0;
    let mut last_arrival = 0;
    for c in &consumers {
        let t = c.tally.lock();
        delivered += t.unique;
        duplicates += t.duplicates;
        last_arrival = last_arrival.max(t.last_arrival_ns);
    }
    let broker_discarded = after
        .iter()
        .zip(&before)
        .map(|(a, b)| a.discarded - b.discarded)
        .sum();
    let expected = events_sent * n_consumers as u64;
    let wall = last_arrival.max(sent_done).saturating_sub(t0).max(1);
    let avg = wall / events_sent.max(1);
    for (client, proxy) in &suppliers {
        let _ = client.disconnect(*proxy).await;
    }
    for c in &consumers {
        let _ = c.client.disconnect(c.proxy).await;
    }
    Ok(BenchResult {
        scenario: cfg.scenario,
        scale,
        consumers: n_consumers,
        events_sent,
        events_delivered: delivered,
        events_lost: expected.saturating_sub(delivered),
        wall_time_ns: wall,
        avg_per_event_ns: avg,
        avg_per_event_per_consumer_ns: (cfg.scenario == Scenario::Consumers).then(|| avg / n_consumers as u64),
        duplicates,
        gaps_observed: expected.saturating_sub(delivered),
        broker_discarded,
    })
}

/// Runs every scale point, `repeat` times each, reporting the median run.
/// A scale point that fails is returned as an error in its slot.
pub async fn run(cfg: &BenchConfig) -> Result<Vec<Result<BenchResult, BenchError>>, BenchError> {
    if cfg.scales.is_empty() || cfg.scales[0] == 0 || cfg.scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::BadScales);
    }
    let mut out = Vec::new();
    for &scale in &cfg.scales {
        let mut runs = Vec::new();
        let mut failure = None;
        for _ in 0..cfg.repeat.max(1) {
            match run_once(cfg, scale).await {
                Ok(r) => runs.push(r),
                Err(e @ BenchError::BrokerUnreachable(_)) => return Err(e),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        out.push(match failure {
            Some(e) => Err(e),
            None => {
                runs.sort_by_key(|r| r.wall_time_ns);
                Ok(runs.swap_remove(runs.len() / 2))
            }
        });
    }
    Ok(out)
}

pub async fn run_threads(cfg: &BenchConfig) -> Result<Vec<Result<BenchResult, BenchError>>, BenchError> {
    run(&BenchConfig {
        scenario: Scenario::Threads,
        ..cfg.clone()
    })
    .await
}

pub async fn run_suppliers(cfg: &BenchConfig) -> Result<Vec<Result<BenchResult, BenchError>>, BenchError> {
    run(&BenchConfig {
        scenario: Scenario::Suppliers,
        ..cfg.clone()
    })
    .await
}

pub async fn run_consumers(cfg: &BenchConfig) -> Result<Vec<Result<BenchResult, BenchError>>, BenchError> {
    run(&BenchConfig {
        scenario: Scenario::Consumers,
        ..cfg.clone()
    })
    .await
}

pub fn write_csv<W: std::io::Write>(results: &[BenchResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        w.write_record([
            r.scenario.as_str().to_owned(),
            r.scale.to_string(),
            r.events_sent.to_string(),
            r.events_delivered.to_string(),
            r.events_lost.to_string(),
            r.wall_time_ns.to_string(),
            r.avg_per_event_ns.to_string(),
            r.avg_per_event_per_consumer_ns
                .map_or_else(|| "n/a".to_owned(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(results: &[BenchResult], path: &Path) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(results, file).map_err(std::io::Error::other)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyReport {
    pub samples: usize,
    pub median_ns: u64,
    pub p90_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

/// One supplier, one push-mode consumer: each event is pushed and waited
/// for before the next, and the push-to-arrival time is recorded.
pub async fn run_latency(
    broker: SocketAddr,
    events: usize,
    warmup: usize,
    payload_bytes: usize,
    reliability: Reliability,
) -> Result<LatencyReport, BenchError> {
    let connect = || async {
        Client::connect(broker)
            .await
            .map_err(|e| BenchError::BrokerUnreachable(e.to_string()))
    };
    let sup_client = connect().await?;
    let con_client = connect().await?;
    let channel = sup_client
        .create_channel(QosProfile::unset().reliability(reliability))
        .await?;
    let sup = sup_client.connect_supplier(channel, QosProfile::unset()).await?;
    let con = con_client
        .connect_consumer(channel, &Subscription::all(), None, QosProfile::unset())
        .await?;
    let mut stream = con_client.subscribe(con).await?;
    let payload = vec![0x5au8; payload_bytes];
    let mut samples = Vec::with_capacity(events);
    for i in 0..warmup + events {
        let start = Instant::now();
        push_until_accepted(&sup_client, sup, &bench_event(0, i as u64, i < warmup, 0, &payload)).await?;
        let d = stream.recv().await.ok_or(ClientError::Closed)?;
        let took = start.elapsed().as_nanos() as u64;
        if reliability == Reliability::Reliable {
            con_client.ack_nowait(con, d.delivery_id).await?;
        }
        if i >= warmup {
            samples.push(took);
        }
    }
    let _ = sup_client.disconnect(sup).await;
    let _ = con_client.disconnect(con).await;
    samples.sort_unstable();
    let at = |q: f64| samples[((samples.len() as f64 * q) as usize).min(samples.len() - 1)];
    Ok(LatencyReport {
        samples: samples.len(),
        median_ns: at(0.5),
        p90_ns: at(0.9),
        p99_ns: at(0.99),
        max_ns: *samples.last().unwrap_or(&0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_are_even() {
        assert_eq!(shares(10, 3), [4, 3, 3]);
        assert_eq!(shares(100_000, 50).iter().sum::<u64>(), 100_000);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
        let row = BenchResult {
            scenario: Scenario::Threads,
            scale: 10,
            consumers: 1,
            events_sent: 100,
            events_delivered: 98,
            events_lost: 2,
            wall_time_ns: 5000,
            avg_per_event_ns: 50,
            avg_per_event_per_consumer_ns: None,
            duplicates: 0,
            gaps_observed: 2,
            broker_discarded: 2,
        };
        let mut fan = row.clone();
        fan.scenario = Scenario::Consumers;
        fan.avg_per_event_per_consumer_ns = Some(5);
        let mut buf = Vec::new();
        write_csv(&[row, fan], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[1], "threads,10,100,98,2,5000,50,n/a");
        assert_eq!(lines[2], "consumers,10,100,98,2,5000,50,5");
    }

    #[test]
    fn tally_spots_duplicates_and_gaps() {
        let mut t = Tally {
            seen: vec![vec![false; 3]],
            ..Tally::default()
        };
        let p = [];
        t.record(&bench_event(0, 0, true, 0, &p), 1);
        t.record(&bench_event(0, 0, false, 0, &p), 2);
        t.record(&bench_event(0, 2, false, 0, &p), 3);
        t.record(&bench_event(0, 2, false, 0, &p), 4);
        assert_eq!((t.received, t.unique, t.duplicates, t.last_arrival_ns), (4, 2, 1, 4));
    }
}
