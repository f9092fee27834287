//! Persistent event logs fed by a channel, with filtered queries and
//! threshold alarms.
//!
//! A log is a consumer on its source channel. Captured events are appended
//! to segment files under `<data-dir>/logs/<log_id>/` and only acknowledged
//! to the channel once the append is synced. When occupancy crosses one of
//! the configured fractions of `max_records`, one alarm event is pushed to
//! the alarm channel.

mod segment;

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Weak};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use thiserror::Error;
use tracing::{debug, error};

pub use segment::{segment_path, SegmentStore};

use crate::channel::{ChannelError, ChannelId, EventChannels, ProxyId, PushOutcome, QosProfile};
use crate::codec::{self, DecodeError};
use crate::event::StructuredEvent;
use crate::filter::{eval_constraint, parse_constraint, Constraint, Subscription};
use crate::value::{Value, ValueMap};

const DRAIN_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FullAction {
    /// Refuse further records once full.
    Halt,
    /// Drop the oldest records to make room.
    Wrap,
}

impl FullAction {
    pub fn as_str(self) -> &'static str {
        match self {
            FullAction::Halt => "Halt",
            FullAction::Wrap => "Wrap",
        }
    }
}

impl FromStr for FullAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "Halt" | "halt" => Ok(FullAction::Halt),
            "Wrap" | "wrap" => Ok(FullAction::Wrap),
            _ => Err(format!("unknown full action `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogConfig {
    pub log_id: String,
    pub source_channel: ChannelId,
    pub capture_filter: Option<Constraint>,
    pub max_records: u64,
    pub full_action: FullAction,
    /// Ascending, unique, each in (0, 1].
    pub threshold_fractions: Vec<f64>,
    pub alarm_channel: Option<ChannelId>,
}

impl LogConfig {
    pub fn new(log_id: impl Into<String>, source_channel: ChannelId, max_records: u64) -> Self {
        LogConfig {
            log_id: log_id.into(),
            source_channel,
            capture_filter: None,
            max_records,
            full_action: FullAction::Halt,
            threshold_fractions: Vec::new(),
            alarm_channel: None,
        }
    }

    pub fn validate(&self) -> Result<(), LogError> {
        let bad = |why: &str| Err(LogError::InvalidConfig(why.to_owned()));
        if self.log_id.is_empty()
            || self.log_id.starts_with('.')
            || self.log_id.contains(['/', '\\', '\0'])
        {
            return bad("log_id must be a plain file name");
        }
        if self.max_records == 0 {
            return bad("max_records must be at least 1");
        }
        let fr = &self.threshold_fractions;
        if fr.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return bad("threshold fractions must lie in (0, 1]");
        }
        if fr.windows(2).any(|w| w[0] >= w[1]) {
            return bad("threshold fractions must be ascending and unique");
        }
        if !fr.is_empty() && self.alarm_channel.is_none() {
            return bad("thresholds need an alarm channel");
        }
        Ok(())
    }

    fn segment_records(&self) -> u64 {
        (self.max_records / 4).clamp(1, 4096)
    }

    fn to_value(&self, segment_records: u64) -> Value {
        let mut m = ValueMap::new();
        m.insert("log_id".into(), self.log_id.clone().into());
        m.insert("source_channel".into(), Value::Int(self.source_channel as i64));
        m.insert(
            "capture_filter".into(),
            self.capture_filter
                .as_ref()
                .map_or(Value::Null, |c| c.to_string().into()),
        );
        m.insert("max_records".into(), Value::Int(self.max_records as i64));
        m.insert("full_action".into(), self.full_action.as_str().into());
        m.insert(
            "threshold_fractions".into(),
            Value::List(self.threshold_fractions.iter().map(|f| Value::Float(*f)).collect()),
        );
        m.insert(
            "alarm_channel".into(),
            self.alarm_channel.map_or(Value::Null, |c| Value::Int(c as i64)),
        );
        m.insert("segment_records".into(), Value::Int(segment_records as i64));
        Value::Map(m)
    }

    fn from_value(v: &Value) -> Option<(Self, u64)> {
        let m = v.as_map()?;
        let int = |k: &str| m.get(k).and_then(Value::as_int).filter(|i| *i >= 0).map(|i| i as u64);
        let capture_filter = match m.get("capture_filter")? {
            Value::Null => None,
            Value::Str(s) => Some(parse_constraint(s).ok()?),
            _ => return None,
        };
        let threshold_fractions = m
            .get("threshold_fractions")?
            .as_list()?
            .iter()
            .map(|f| match f {
                Value::Float(f) => Some(*f),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        let cfg = LogConfig {
            log_id: m.get("log_id")?.as_str()?.to_owned(),
            source_channel: int("source_channel")?,
            capture_filter,
            max_records: int("max_records")?,
            full_action: m.get("full_action")?.as_str()?.parse().ok()?,
            threshold_fractions,
            alarm_channel: match m.get("alarm_channel")? {
                Value::Null => None,
                Value::Int(c) => Some(*c as u64),
                _ => return None,
            },
        };
        Some((cfg, int("segment_records")?.max(1)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub id: u64,
    /// Broker wall clock, nanoseconds since the Unix epoch.
    pub timestamp_ns: i64,
    pub event: StructuredEvent,
}

impl LogRecord {
    pub fn to_value(&self) -> Value {
        let mut m = ValueMap::new();
        m.insert("id".into(), Value::Int(self.id as i64));
        m.insert("timestamp_ns".into(), Value::Int(self.timestamp_ns));
        m.insert("event".into(), self.event.to_value());
        Value::Map(m)
    }

    pub fn from_value(v: Value) -> Result<Self, DecodeError> {
        let shape = |why: &str| DecodeError {
            position: 0,
            reason: format!("log record: {why}"),
        };
        let mut m = v.into_map().ok_or_else(|| shape("not a map"))?;
        let id = m
            .get("id")
            .and_then(Value::as_int)
            .filter(|i| *i >= 1)
            .ok_or_else(|| shape("bad id"))?;
        let timestamp_ns = m
            .get("timestamp_ns")
            .and_then(Value::as_int)
            .ok_or_else(|| shape("bad timestamp"))?;
        let event = StructuredEvent::from_value(m.remove("event").ok_or_else(|| shape("no event"))?)?;
        Ok(LogRecord {
            id: id as u64,
            timestamp_ns,
            event,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        codec::encode_value(&self.to_value()).into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        LogRecord::from_value(codec::decode_value(bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("no such log `{0}`")]
    NoSuchLog(String),
    #[error("log `{0}` already exists")]
    DuplicateLog(String),
    #[error("log `{0}` is full")]
    LogFull(String),
    #[error("invalid log config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("log i/o: {0}")]
    Io(String),
}

impl LogError {
    pub fn code(&self) -> &'static str {
        match self {
            LogError::NoSuchLog(_) => "NoSuchLog",
            LogError::DuplicateLog(_) => "DuplicateLog",
            LogError::LogFull(_) => "LogFull",
            LogError::InvalidConfig(_) => "InvalidConfig",
            LogError::Channel(e) => e.code(),
            LogError::Io(_) => "IoError",
        }
    }
}

impl From<io::Error> for LogError {
    fn from(e: io::Error) -> Self {
        LogError::Io(e.to_string())
    }
}

/// One page of query results. `next_id` is where the following page starts
/// when the page was cut short by `max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPage {
    pub records: Vec<LogRecord>,
    pub next_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogStats {
    pub first_id: u64,
    pub last_id: u64,
    pub records: u64,
    pub alarms_sent: u64,
    pub alarm_failures: u64,
    pub attached: bool,
}

struct LogState {
    store: SegmentStore,
}

/// Proxies linking a log to live channels. Absent for logs restored from
/// disk until they are re-created.
#[derive(Debug, Clone, Copy)]
struct Attachment {
    consumer: ProxyId,
    alarm_supplier: Option<ProxyId>,
}

pub struct Log {
    cfg: RwLock<LogConfig>,
    attachment: Mutex<Option<Attachment>>,
    state: RwLock<LogState>,
    alarms_sent: AtomicU64,
    alarm_failures: AtomicU64,
}

impl Log {
    fn max_records(&self) -> u64 {
        self.cfg.read().max_records
    }

    /// Ids currently visible: a Wrap log shows only the newest `max_records`.
    fn window(&self, st: &LogState) -> (u64, u64) {
        let last = st.store.last_id();
        let cfg = self.cfg.read();
        let floor = match cfg.full_action {
            FullAction::Halt => 1,
            FullAction::Wrap => last.saturating_sub(cfg.max_records) + 1,
        };
        let first = floor.max(st.store.first_id().unwrap_or(last + 1));
        (first, last)
    }

    fn occupancy(&self, st: &LogState) -> u64 {
        let (first, last) = self.window(st);
        (last + 1).saturating_sub(first)
    }

    /// Persists one event and returns the alarms its append triggered.
    fn append(&self, event: StructuredEvent) -> Result<(LogRecord, Vec<f64>), LogError> {
        let mut st = self.state.write();
        let (max, action, fractions, log_id) = {
            let cfg = self.cfg.read();
            (
                cfg.max_records,
                cfg.full_action,
                cfg.threshold_fractions.clone(),
                cfg.log_id.clone(),
            )
        };
        let before = self.occupancy(&st);
        if action == FullAction::Halt && before >= max {
            return Err(LogError::LogFull(log_id));
        }
        let record = LogRecord {
            id: st.store.last_id() + 1,
            timestamp_ns: now_ns(),
            event,
        };
        st.store.append(&record)?;
        if action == FullAction::Wrap {
            let (first, _) = self.window(&st);
            st.store.drop_below(first)?;
        }
        let after = self.occupancy(&st);
        let crossed = fractions
            .into_iter()
            .filter(|f| {
                let level = f * max as f64;
                (before as f64) < level && (after as f64) >= level
            })
            .collect();
        Ok((record, crossed))
    }

    fn query(&self, c: &Constraint, from_id: u64, max: usize) -> Result<QueryPage, LogError> {
        let st = self.state.read();
        let (first, last) = self.window(&st);
        let mut records = Vec::new();
        let mut id = from_id.max(first);
        while id <= last {
            if records.len() == max {
                return Ok(QueryPage {
                    records,
                    next_id: Some(id),
                });
            }
            if let Some(r) = st.store.read(id)? {
                if eval_constraint(c, &r.event) {
                    records.push(r);
                }
            }
            id += 1;
        }
        Ok(QueryPage {
            records,
            next_id: None,
        })
    }

    fn stats(&self) -> LogStats {
        let st = self.state.read();
        let (first, last) = self.window(&st);
        LogStats {
            first_id: first,
            last_id: last,
            records: self.occupancy(&st),
            alarms_sent: self.alarms_sent.load(Ordering::Relaxed),
            alarm_failures: self.alarm_failures.load(Ordering::Relaxed),
            attached: self.attachment.lock().is_some(),
        }
    }
}

fn now_ns() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as i64)
}

pub fn alarm_event(log_id: &str, fraction: f64, records: u64) -> StructuredEvent {
    StructuredEvent::new("log", "threshold")
        .named(log_id)
        .with_field("fraction", fraction)
        .with_field("records", records as i64)
}

/// Every log hosted by one broker.
pub struct LogService {
    dir: PathBuf,
    channels: Arc<EventChannels>,
    logs: RwLock<HashMap<String, Arc<Log>>>,
    pump: Mutex<Option<mpsc::Sender<String>>>,
}

impl LogService {
    /// Opens `<data_dir>/logs` and restores every log found there. Restored
    /// logs are queryable but detached from channels until re-created.
    pub fn open(data_dir: &Path, channels: Arc<EventChannels>) -> Result<Self, LogError> {
        let dir = data_dir.join("logs");
        fs::create_dir_all(&dir)?;
        let mut logs = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let path = entry.path();
            let Ok(bytes) = fs::read(path.join("config")) else {
                continue;
            };
            let Some((cfg, per_segment)) = codec::decode_value(&bytes)
                .ok()
                .and_then(|v| LogConfig::from_value(&v))
            else {
                error!(path = %path.display(), "unreadable log config, skipping");
                continue;
            };
            let store = SegmentStore::open(&path, per_segment)?;
            debug!(log = %cfg.log_id, last_id = store.last_id(), "restored log");
            logs.insert(
                cfg.log_id.clone(),
                Arc::new(Log {
                    cfg: RwLock::new(cfg),
                    attachment: Mutex::new(None),
                    state: RwLock::new(LogState { store }),
                    alarms_sent: AtomicU64::new(0),
                    alarm_failures: AtomicU64::new(0),
                }),
            );
        }
        Ok(LogService {
            dir,
            channels,
            logs: RwLock::new(logs),
            pump: Mutex::new(None),
        })
    }

    /// Starts a background thread that drains logs as events arrive. Without
    /// it, callers drive logs with [`drain`](Self::drain).
    pub fn start_pump(self: &Arc<Self>) {
        let (tx, rx) = mpsc::channel::<String>();
        let weak: Weak<LogService> = Arc::downgrade(self);
        std::thread::Builder::new()
            .name("notibus-log-pump".into())
            .spawn(move || {
                while let Ok(log_id) = rx.recv() {
                    let Some(svc) = weak.upgrade() else { break };
                    if let Err(e) = svc.drain(&log_id) {
                        error!(log = %log_id, error = %e, "log drain failed");
                    }
                }
            })
            .expect("spawn log pump");
        let logs: Vec<(String, Arc<Log>)> = self
            .logs
            .read()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (id, log) in logs {
            if let Some(att) = *log.attachment.lock() {
                let _ = self.channels.set_waker(att.consumer, Some(waker(&tx, &id)));
            }
        }
        *self.pump.lock() = Some(tx);
    }

    fn log(&self, log_id: &str) -> Result<Arc<Log>, LogError> {
        self.logs
            .read()
            .get(log_id)
            .cloned()
            .ok_or_else(|| LogError::NoSuchLog(log_id.to_owned()))
    }

    /// Creates a log, or re-attaches a restored one with the same id.
    pub fn create_log(&self, cfg: LogConfig) -> Result<(), LogError> {
        cfg.validate()?;
        if !self.channels.channel_exists(cfg.source_channel) {
            return Err(ChannelError::NoSuchChannel(cfg.source_channel).into());
        }
        if let Some(alarm) = cfg.alarm_channel {
            if !self.channels.channel_exists(alarm) {
                return Err(ChannelError::NoSuchChannel(alarm).into());
            }
        }
        let mut logs = self.logs.write();
        let log = match logs.get(&cfg.log_id) {
            Some(existing) if existing.attachment.lock().is_some() => {
                return Err(LogError::DuplicateLog(cfg.log_id));
            }
            Some(existing) => {
                let old = existing.cfg.read().clone();
                if old.max_records != cfg.max_records || old.full_action != cfg.full_action {
                    return Err(LogError::InvalidConfig(
                        "re-attaching a log cannot change max_records or full_action".into(),
                    ));
                }
                *existing.cfg.write() = cfg.clone();
                self.write_config(&cfg, None)?;
                existing.clone()
            }
            None => {
                let per_segment = cfg.segment_records();
                let store = SegmentStore::open(&self.dir.join(&cfg.log_id), per_segment)?;
                self.write_config(&cfg, Some(per_segment))?;
                let log = Arc::new(Log {
                    cfg: RwLock::new(cfg.clone()),
                    attachment: Mutex::new(None),
                    state: RwLock::new(LogState { store }),
                    alarms_sent: AtomicU64::new(0),
                    alarm_failures: AtomicU64::new(0),
                });
                logs.insert(cfg.log_id.clone(), log.clone());
                log
            }
        };
        let consumer = self.channels.connect_consumer(
            cfg.source_channel,
            Subscription::all(),
            cfg.capture_filter.clone(),
            QosProfile::unset(),
        )?;
        let alarm_supplier = match cfg.alarm_channel {
            Some(ch) => Some(self.channels.connect_supplier(ch, QosProfile::unset())?),
            None => None,
        };
        *log.attachment.lock() = Some(Attachment {
            consumer,
            alarm_supplier,
        });
        if let Some(tx) = self.pump.lock().as_ref() {
            self.channels
                .set_waker(consumer, Some(waker(tx, &cfg.log_id)))?;
        }
        Ok(())
    }

    fn write_config(&self, cfg: &LogConfig, per_segment: Option<u64>) -> Result<(), LogError> {
        let path = self.dir.join(&cfg.log_id);
        fs::create_dir_all(&path)?;
        let per_segment = match per_segment {
            Some(p) => p,
            None => codec::decode_value(&fs::read(path.join("config"))?)
                .ok()
                .and_then(|v| LogConfig::from_value(&v))
                .map_or(cfg.segment_records(), |(_, p)| p),
        };
        let tmp = path.join(".config.tmp");
        fs::write(&tmp, codec::encode_value(&cfg.to_value(per_segment)))?;
        fs::File::open(&tmp)?.sync_all()?;
        fs::rename(tmp, path.join("config"))?;
        Ok(())
    }

    /// Persists every event waiting in the log's channel queue. Returns how
    /// many were appended.
    pub fn drain(&self, log_id: &str) -> Result<usize, LogError> {
        let log = self.log(log_id)?;
        let Some(att) = *log.attachment.lock() else {
            return Ok(0);
        };
        let mut appended = 0;
        loop {
            let batch = match self.channels.take_for_delivery(att.consumer, DRAIN_BATCH) {
                Ok(b) => b,
                Err(ChannelError::NoSuchProxy(_)) => return Ok(appended),
                Err(e) => return Err(e.into()),
            };
            if batch.is_empty() {
                return Ok(appended);
            }
            for (delivery, event) in batch {
                match log.append(StructuredEvent::clone(&event)) {
                    Ok((_, crossed)) => {
                        self.channels.ack(att.consumer, delivery)?;
                        appended += 1;
                        for fraction in crossed {
                            self.raise_alarm(&log, att.alarm_supplier, fraction);
                        }
                    }
                    Err(e) => {
                        if !matches!(e, LogError::LogFull(_)) {
                            error!(log = %log_id, error = %e, "append failed, event dropped");
                        }
                        self.channels.discard_inflight(att.consumer, delivery)?;
                    }
                }
            }
        }
    }

    fn raise_alarm(&self, log: &Log, supplier: Option<ProxyId>, fraction: f64) {
        let records = log.occupancy(&log.state.read());
        let ev = alarm_event(&log.cfg.read().log_id, fraction, records);
        let ok = supplier.is_some_and(|s| {
            matches!(self.channels.push(s, ev), Ok(PushOutcome::Accepted))
        });
        if ok {
            log.alarms_sent.fetch_add(1, Ordering::Relaxed);
        } else {
            log.alarm_failures.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn drain_all(&self) -> Result<usize, LogError> {
        let ids: Vec<String> = self.logs.read().keys().cloned().collect();
        let mut n = 0;
        for id in ids {
            n += self.drain(&id)?;
        }
        Ok(n)
    }

    /// Records with id >= `from_id` matching `c`, ascending, at most `max`.
    pub fn query(&self, log_id: &str, c: &Constraint, from_id: u64, max: usize) -> Result<QueryPage, LogError> {
        self.log(log_id)?.query(c, from_id, max)
    }

    pub fn stats(&self, log_id: &str) -> Result<LogStats, LogError> {
        Ok(self.log(log_id)?.stats())
    }

    pub fn max_records(&self, log_id: &str) -> Result<u64, LogError> {
        Ok(self.log(log_id)?.max_records())
    }

    pub fn log_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.logs.read().keys().cloned().collect();
        ids.sort();
        ids
    }
}

fn waker(tx: &mpsc::Sender<String>, log_id: &str) -> crate::channel::Waker {
    let tx = Mutex::new(tx.clone());
    let id = log_id.to_owned();
    Arc::new(move || {
        let _ = tx.lock().send(id.clone());
    })
}
