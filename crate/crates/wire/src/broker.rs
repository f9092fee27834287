//! The broker process: one TCP listener, one task per session, all services
//! shared behind an `Arc`.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use notibus_core::channel::{EventChannels, ProxyId, Reliability};
use notibus_core::naming::{Name, NamingService, RefKind, ServiceRef};
use notibus_core::notifylog::{LogError, LogService};
use notibus_core::property::{PropertyError, PropertyService};
use parking_lot::Mutex;
use thiserror::Error;
use tokio::io::{AsyncWriteExt, BufReader, BufWriter};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, Notify};
use tokio::task::{AbortHandle, JoinHandle, JoinSet};
use tracing::{debug, info, warn};

use crate::dispatch;
use crate::frame::{decode_body, encode_frame, read_frame, FrameError, Message};

pub const DEFAULT_PORT: u16 = 4690;
pub const PROTOCOL_VERSION: i64 = 1;
const WRITE_QUEUE: usize = 256;
const PUMP_BATCH: usize = 64;

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// How long a dropped session's proxies wait for their client to return.
    pub reconnect_grace: Duration,
}

impl BrokerConfig {
    pub fn new(listen: impl Into<String>, data_dir: impl Into<PathBuf>) -> Self {
        BrokerConfig {
            listen: listen.into(),
            data_dir: data_dir.into(),
            reconnect_grace: Duration::from_millis(5000),
        }
    }
}

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("cannot listen on {0}: {1}")]
    Listen(String, io::Error),
    #[error("cannot open property store: {0}")]
    Properties(PropertyError),
    #[error("cannot open log store: {0}")]
    Logs(LogError),
}

/// Who currently answers for a proxy created over the wire.
struct Owner {
    /// 0 while orphaned and waiting out the grace period.
    session: u64,
    generation: u64,
    pump: Option<AbortHandle>,
}

#[derive(Debug, Default)]
pub struct BrokerCounters {
    pub sessions_opened: AtomicU64,
    /// Sessions closed because they sent an unreadable frame.
    pub sessions_rejected: AtomicU64,
}

pub struct Services {
    pub channels: Arc<EventChannels>,
    pub naming: NamingService,
    pub properties: PropertyService,
    pub logs: Arc<LogService>,
    pub counters: BrokerCounters,
    owners: Mutex<HashMap<ProxyId, Owner>>,
    grace: Duration,
    next_session: AtomicU64,
}

impl Services {
    pub fn open(cfg: &BrokerConfig) -> Result<Arc<Self>, BrokerError> {
        let channels = Arc::new(EventChannels::new());
        let properties = PropertyService::open(&cfg.data_dir).map_err(BrokerError::Properties)?;
        let logs = Arc::new(LogService::open(&cfg.data_dir, channels.clone()).map_err(BrokerError::Logs)?);
        logs.start_pump();
        let naming = NamingService::new();
        for (path, kind) in [
            ("services/notify/factory", RefKind::ChannelFactory),
            ("services/log", RefKind::Log),
            ("services/properties", RefKind::PropertySet),
        ] {
            let name = Name::parse(path).expect("static name");
            naming
                .ensure_context(&Name::new(name.parent().to_vec()).expect("static name"))
                .expect("fresh naming tree");
            naming
                .bind(&name, ServiceRef::new(kind, "default"))
                .expect("fresh naming tree");
        }
        Ok(Arc::new(Services {
            channels,
            naming,
            properties,
            logs,
            counters: BrokerCounters::default(),
            owners: Mutex::new(HashMap::new()),
            grace: cfg.reconnect_grace,
            next_session: AtomicU64::new(1),
        }))
    }

    pub(crate) fn adopt(&self, proxy: ProxyId, session: u64) {
        self.owners.lock().insert(
            proxy,
            Owner {
                session,
                generation: 0,
                pump: None,
            },
        );
    }

    /// Makes `session` the owner of a wire-created proxy. A different
    /// previous owner loses its push stream; unacknowledged events go back
    /// through recovery.
    pub(crate) fn claim(&self, proxy: ProxyId, session: u64) -> bool {
        let mut owners = self.owners.lock();
        let Some(owner) = owners.get_mut(&proxy) else {
            return false;
        };
        if owner.session != session {
            owner.session = session;
            owner.generation += 1;
            if let Some(pump) = owner.pump.take() {
                pump.abort();
                let _ = self.channels.recover_inflight(proxy);
            }
        }
        true
    }

    pub(crate) fn release(&self, proxy: ProxyId) {
        if let Some(owner) = self.owners.lock().remove(&proxy) {
            if let Some(pump) = owner.pump {
                pump.abort();
            }
        }
    }

    /// Switches a consumer to push delivery over `tx`.
    pub(crate) fn start_pump(self: &Arc<Self>, proxy: ProxyId, tx: mpsc::Sender<Vec<u8>>) {
        let notify = Arc::new(Notify::new());
        let reliable = self
            .channels
            .consumer_qos(proxy)
            .map(|q| q.reliability == Some(Reliability::Reliable))
            .unwrap_or(false);
        let mut owners = self.owners.lock();
        let Some(owner) = owners.get_mut(&proxy) else {
            return;
        };
        if let Some(old) = owner.pump.take() {
            old.abort();
            let _ = self.channels.recover_inflight(proxy);
        }
        let task = tokio::spawn(pump(self.channels.clone(), proxy, tx, notify.clone(), reliable));
        owner.pump = Some(task.abort_handle());
        drop(owners);
        let n = notify.clone();
        let _ = self
            .channels
            .set_waker(proxy, Some(Arc::new(move || n.notify_one())));
    }

    fn session_ended(self: &Arc<Self>, session: u64) {
        let mut owners = self.owners.lock();
        for (&proxy, owner) in owners.iter_mut().filter(|(_, o)| o.session == session) {
            if let Some(pump) = owner.pump.take() {
                pump.abort();
            }
            let _ = self.channels.set_waker(proxy, None);
            let _ = self.channels.recover_inflight(proxy);
            owner.session = 0;
            owner.generation += 1;
            let generation = owner.generation;
            let services = Arc::downgrade(self);
            if let Ok(rt) = tokio::runtime::Handle::try_current() {
                rt.spawn(async move {
                    tokio::time::sleep(services.upgrade().map_or(Duration::ZERO, |s| s.grace)).await;
                    let Some(services) = services.upgrade() else { return };
                    let mut owners = services.owners.lock();
                    let expired = owners
                        .get(&proxy)
                        .is_some_and(|o| o.session == 0 && o.generation == generation);
                    if expired {
                        owners.remove(&proxy);
                        drop(owners);
                        debug!(proxy, "grace period over, disconnecting");
                        let _ = services.channels.disconnect(proxy);
                    }
                });
            }
        }
    }
}

async fn pump(
    channels: Arc<EventChannels>,
    proxy: ProxyId,
    tx: mpsc::Sender<Vec<u8>>,
    notify: Arc<Notify>,
    reliable: bool,
) {
    loop {
        let batch = match channels.take_for_delivery(proxy, PUMP_BATCH) {
            Ok(b) => b,
            Err(_) => return,
        };
        let Some(&(last, _)) = batch.last() else {
            notify.notified().await;
            continue;
        };
        for (delivery_id, event) in batch {
            let msg = Message::new("Deliver", 0)
                .arg("proxy_id", proxy as i64)
                .arg("delivery_id", delivery_id as i64)
                .arg("event", event.to_value());
            let frame = match encode_frame(&msg) {
                Ok(f) => f,
                Err(e) => {
                    warn!(proxy, error = %e, "undeliverable event dropped");
                    let _ = channels.discard_inflight(proxy, delivery_id);
                    continue;
                }
            };
            if tx.send(frame).await.is_err() {
                return;
            }
        }
        if !reliable {
            let _ = channels.ack(proxy, last);
        }
    }
}

pub(crate) struct Session {
    pub id: u64,
    pub tx: mpsc::Sender<Vec<u8>>,
    pub greeted: bool,
}

/// Runs the session's cleanup however the session task ends.
struct SessionGuard {
    services: Arc<Services>,
    id: u64,
}

impl Drop for SessionGuard {
    fn drop(&mut self) {
        self.services.session_ended(self.id);
    }
}

async fn write_loop(wr: OwnedWriteHalf, mut rx: mpsc::Receiver<Vec<u8>>) {
    let mut wr = BufWriter::new(wr);
    while let Some(frame) = rx.recv().await {
        if wr.write_all(&frame).await.is_err() {
            return;
        }
        while let Ok(frame) = rx.try_recv() {
            if wr.write_all(&frame).await.is_err() {
                return;
            }
        }
        if wr.flush().await.is_err() {
            return;
        }
    }
    let _ = wr.shutdown().await;
}

async fn serve_session(services: Arc<Services>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let id = services.next_session.fetch_add(1, Ordering::Relaxed);
    services.counters.sessions_opened.fetch_add(1, Ordering::Relaxed);
    let (rd, wr) = stream.into_split();
    let (tx, rx) = mpsc::channel(WRITE_QUEUE);
    tokio::spawn(write_loop(wr, rx));
    let _guard = SessionGuard {
        services: services.clone(),
        id,
    };
    let mut session = Session {
        id,
        tx,
        greeted: false,
    };
    let mut rd = BufReader::new(rd);
    loop {
        let msg = match read_frame(&mut rd).await.and_then(|body| body.map(|b| decode_body(&b)).transpose()) {
            Ok(Some(msg)) => msg,
            Ok(None) => break,
            Err(FrameError::Io(e)) => {
                debug!(session = id, error = %e, "session read failed");
                break;
            }
            Err(e) => {
                services.counters.sessions_rejected.fetch_add(1, Ordering::Relaxed);
                debug!(session = id, error = %e, "closing session after bad frame");
                let reply = dispatch::error_message(0, e.code(), &e.to_string());
                if let Ok(frame) = encode_frame(&reply) {
                    let _ = session.tx.try_send(frame);
                }
                break;
            }
        };
        let reply = dispatch::handle(&services, &mut session, msg);
        let frame = encode_frame(&reply).unwrap_or_else(|e| {
            encode_frame(&dispatch::error_message(reply.request_id, e.code(), &e.to_string()))
                .expect("small error frame")
        });
        if session.tx.send(frame).await.is_err() {
            break;
        }
    }
}

pub struct Broker {
    listener: TcpListener,
    services: Arc<Services>,
}

impl Broker {
    /// Opens the stores under the data directory and binds the listener.
    pub async fn bind(cfg: &BrokerConfig) -> Result<Broker, BrokerError> {
        let listener = TcpListener::bind(&cfg.listen)
            .await
            .map_err(|e| BrokerError::Listen(cfg.listen.clone(), e))?;
        let services = Services::open(cfg)?;
        Ok(Broker { listener, services })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    pub fn services(&self) -> &Arc<Services> {
        &self.services
    }

    /// Accepts sessions until the task is dropped; dropping it also ends
    /// every session it started.
    pub async fn run(self) {
        info!(addr = %self.local_addr(), "broker listening");
        let mut sessions = JoinSet::new();
        loop {
            tokio::select! {
                accepted = self.listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        debug!(%peer, "session opened");
                        sessions.spawn(serve_session(self.services.clone(), stream));
                    }
                    Err(e) => {
                        warn!(error = %e, "accept failed");
                        tokio::time::sleep(Duration::from_millis(10)).await;
                    }
                },
                Some(_) = sessions.join_next(), if !sessions.is_empty() => {}
            }
        }
    }

    pub fn spawn(self) -> BrokerHandle {
        let addr = self.local_addr();
        let services = self.services.clone();
        BrokerHandle {
            addr,
            services,
            task: tokio::spawn(self.run()),
        }
    }
}

/// A broker running on the current runtime. Dropping the handle stops it.
pub struct BrokerHandle {
    pub addr: SocketAddr,
    pub services: Arc<Services>,
    task: JoinHandle<()>,
}

impl BrokerHandle {
    pub async fn shutdown(mut self) {
        self.task.abort();
        let _ = (&mut self.task).await;
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}
