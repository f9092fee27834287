//! Async client session. Requests may be issued concurrently from several
//! tasks sharing one `Client`; replies are matched by request id.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use notibus_core::channel::{ChannelId, ProxyId, QosProfile};
use notibus_core::event::StructuredEvent;
use notibus_core::filter::{print_constraint, Constraint, Subscription};
use notibus_core::naming::{BindingKind, ServiceRef};
use notibus_core::notifylog::{LogConfig, LogRecord};
use notibus_core::value::{Value, ValueMap};
use parking_lot::Mutex;
use thiserror::Error;
use tokio::io::{AsyncWriteExt, BufReader, BufWriter};
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::broker::PROTOCOL_VERSION;
use crate::frame::{encode_frame, read_message, FrameError, Message};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("cannot reach broker: {0}")]
    Unreachable(String),
    #[error("connection closed")]
    Closed,
    #[error("{code}: {message}")]
    Remote { code: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl ClientError {
    /// The broker's error code, if the broker refused the request.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Remote { code, .. } => Some(code),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub delivery_id: u64,
    pub event: StructuredEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProxyStats {
    pub enqueued: u64,
    pub delivered: u64,
    pub discarded: u64,
    pub queued: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPage {
    pub records: Vec<LogRecord>,
    pub next_id: Option<u64>,
}

#[derive(Default)]
struct Routes {
    pending: HashMap<u64, oneshot::Sender<Message>>,
    streams: HashMap<ProxyId, mpsc::UnboundedSender<Delivery>>,
    closed: bool,
}

pub struct Client {
    tx: mpsc::Sender<Vec<u8>>,
    routes: Arc<Mutex<Routes>>,
    next_id: AtomicU64,
    reader: JoinHandle<()>,
}

impl Drop for Client {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

impl Client {
    /// Connects and performs the Hello exchange.
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<Client> {
        let stream = TcpStream::connect(addr)
            .await
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        let _ = stream.set_nodelay(true);
        let (rd, wr) = stream.into_split();
        let (tx, mut rx) = mpsc::channel::<Vec<u8>>(256);
        tokio::spawn(async move {
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
        });
        let routes = Arc::new(Mutex::new(Routes::default()));
        let r = routes.clone();
        let reader = tokio::spawn(async move {
            let mut rd = BufReader::new(rd);
            while let Ok(Some(msg)) = read_message(&mut rd).await {
                route(&r, msg);
            }
            let mut routes = r.lock();
            routes.closed = true;
            routes.pending.clear();
            routes.streams.clear();
        });
        let client = Client {
            tx,
            routes,
            next_id: AtomicU64::new(1),
            reader,
        };
        let ok = client
            .request("Hello", [("version", Value::Int(PROTOCOL_VERSION))])
            .await?;
        if ok.get("version") != Some(&Value::Int(PROTOCOL_VERSION)) {
            return Err(ClientError::Protocol("unexpected Hello reply".into()));
        }
        Ok(client)
    }

    /// Sends a raw request and waits for its reply's args.
    pub async fn call(&self, kind: &str, args: ValueMap) -> Result<ValueMap> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (done, wait) = oneshot::channel();
        {
            let mut routes = self.routes.lock();
            if routes.closed {
                return Err(ClientError::Closed);
            }
            routes.pending.insert(id, done);
        }
        let msg = Message {
            kind: kind.to_owned(),
            request_id: id,
            args,
        };
        self.send(&msg).await?;
        let reply = wait.await.map_err(|_| ClientError::Closed)?;
        if reply.kind == "Error" {
            let text = |k: &str| reply.args.get(k).and_then(Value::as_str).unwrap_or("").to_owned();
            return Err(ClientError::Remote {
                code: text("code"),
                message: text("message"),
            });
        }
        if reply.kind != format!("{kind}Ok") {
            return Err(ClientError::Protocol(format!("`{}` in reply to `{kind}`", reply.kind)));
        }
        Ok(reply.args)
    }

    async fn request<const N: usize>(&self, kind: &str, args: [(&str, Value); N]) -> Result<ValueMap> {
        let args = args.into_iter().map(|(k, v)| (k.to_owned(), v)).collect();
        self.call(kind, args).await
    }

    async fn send(&self, msg: &Message) -> Result<()> {
        let frame = encode_frame(msg)?;
        self.tx.send(frame).await.map_err(|_| ClientError::Closed)
    }

    pub fn is_closed(&self) -> bool {
        self.routes.lock().closed
    }

    pub async fn create_channel(&self, qos: QosProfile) -> Result<ChannelId> {
        let r = self.request("CreateChannel", [("qos", qos.to_value())]).await?;
        int(&r, "channel_id")
    }

    pub async fn connect_supplier(&self, channel: ChannelId, qos: QosProfile) -> Result<ProxyId> {
        let r = self
            .request("ConnectSupplier", [("channel_id", id_value(channel)), ("qos", qos.to_value())])
            .await?;
        int(&r, "proxy_id")
    }

    pub async fn connect_consumer(
        &self,
        channel: ChannelId,
        subscription: &Subscription,
        filter: Option<&Constraint>,
        qos: QosProfile,
    ) -> Result<ProxyId> {
        let patterns = subscription
            .patterns
            .iter()
            .map(|(d, t)| Value::List(vec![d.as_str().into(), t.as_str().into()]))
            .collect();
        let r = self
            .request(
                "ConnectConsumer",
                [
                    ("channel_id", id_value(channel)),
                    ("subscription", Value::List(patterns)),
                    ("filter", filter.map_or(Value::Null, |c| print_constraint(c).into())),
                    ("qos", qos.to_value()),
                ],
            )
            .await?;
        int(&r, "proxy_id")
    }

    pub async fn set_filter(&self, proxy: ProxyId, filter: Option<&Constraint>) -> Result<()> {
        self.request(
            "SetFilter",
            [
                ("proxy_id", id_value(proxy)),
                ("filter", filter.map_or(Value::Null, |c| print_constraint(c).into())),
            ],
        )
        .await
        .map(drop)
    }

    pub async fn push(&self, proxy: ProxyId, event: &StructuredEvent) -> Result<PushStatus> {
        let r = self
            .request("Push", [("proxy_id", id_value(proxy)), ("event", event.to_value())])
            .await?;
        match r.get("status").and_then(Value::as_str) {
            Some("Accepted") => Ok(PushStatus::Accepted),
            Some("Rejected") => Ok(PushStatus::Rejected),
            _ => Err(ClientError::Protocol("bad push status".into())),
        }
    }

    /// Polls up to `max` queued events.
    pub async fn receive(&self, proxy: ProxyId, max: usize) -> Result<Vec<StructuredEvent>> {
        let r = self
            .request("Receive", [("proxy_id", id_value(proxy)), ("max", Value::Int(max as i64))])
            .await?;
        r.get("events")
            .and_then(Value::as_list)
            .ok_or_else(|| ClientError::Protocol("missing events".into()))?
            .iter()
            .map(|v| StructuredEvent::from_value(v.clone()).map_err(|e| ClientError::Protocol(e.to_string())))
            .collect()
    }

    /// Switches the consumer to push mode. Deliveries arrive on the returned
    /// stream in queue order; reliable consumers must [`ack`](Self::ack) them.
    pub async fn subscribe(&self, proxy: ProxyId) -> Result<mpsc::UnboundedReceiver<Delivery>> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.routes.lock().streams.insert(proxy, tx);
        match self.request("Subscribe", [("proxy_id", id_value(proxy))]).await {
            Ok(_) => Ok(rx),
            Err(e) => {
                self.routes.lock().streams.remove(&proxy);
                Err(e)
            }
        }
    }

    /// Acknowledges every delivery up to and including `delivery_id`.
    pub async fn ack(&self, proxy: ProxyId, delivery_id: u64) -> Result<u64> {
        let r = self
            .request("Ack", [("proxy_id", id_value(proxy)), ("delivery_id", id_value(delivery_id))])
            .await?;
        int(&r, "acked")
    }

    /// Like [`ack`](Self::ack) without waiting for the reply.
    pub async fn ack_nowait(&self, proxy: ProxyId, delivery_id: u64) -> Result<()> {
        let msg = Message::new("Ack", self.next_id.fetch_add(1, Ordering::Relaxed))
            .arg("proxy_id", id_value(proxy))
            .arg("delivery_id", id_value(delivery_id));
        self.send(&msg).await
    }

    pub async fn disconnect(&self, proxy: ProxyId) -> Result<()> {
        self.routes.lock().streams.remove(&proxy);
        self.request("Disconnect", [("proxy_id", id_value(proxy))]).await.map(drop)
    }

    pub async fn stats(&self, proxy: ProxyId) -> Result<ProxyStats> {
        let r = self.request("Stats", [("proxy_id", id_value(proxy))]).await?;
        Ok(ProxyStats {
            enqueued: int(&r, "enqueued")?,
            delivered: int(&r, "delivered")?,
            discarded: int(&r, "discarded")?,
            queued: int(&r, "queued")?,
        })
    }

    pub async fn bind(&self, name: &str, target: &ServiceRef) -> Result<()> {
        self.request("Bind", [("name", name.into()), ("ref", target.to_value())])
            .await
            .map(drop)
    }

    pub async fn rebind(&self, name: &str, target: &ServiceRef) -> Result<()> {
        self.request("Rebind", [("name", name.into()), ("ref", target.to_value())])
            .await
            .map(drop)
    }

    pub async fn bind_new_context(&self, name: &str) -> Result<()> {
        self.request("BindNewContext", [("name", name.into())]).await.map(drop)
    }

    pub async fn resolve(&self, name: &str) -> Result<ServiceRef> {
        let r = self.request("Resolve", [("name", name.into())]).await?;
        ServiceRef::from_value(r.get("ref").unwrap_or(&Value::Null)).map_err(ClientError::Protocol)
    }

    pub async fn unbind(&self, name: &str) -> Result<()> {
        self.request("Unbind", [("name", name.into())]).await.map(drop)
    }

    /// Bindings of a context; `None` lists the root.
    pub async fn list(&self, name: Option<&str>) -> Result<Vec<(String, BindingKind)>> {
        let r = self
            .request("List", [("name", name.map_or(Value::Null, Value::from))])
            .await?;
        let bad = || ClientError::Protocol("malformed binding list".into());
        r.get("bindings")
            .and_then(Value::as_list)
            .ok_or_else(bad)?
            .iter()
            .map(|b| {
                let m = b.as_map().ok_or_else(bad)?;
                let name = m.get("name").and_then(Value::as_str).ok_or_else(bad)?;
                let kind = match m.get("kind").and_then(Value::as_str) {
                    Some("Object") => BindingKind::Object,
                    Some("Context") => BindingKind::Context,
                    _ => return Err(bad()),
                };
                Ok((name.to_owned(), kind))
            })
            .collect()
    }

    pub async fn define_property(&self, set_id: &str, name: &str, value: Value) -> Result<()> {
        self.request(
            "DefineProperty",
            [("set_id", set_id.into()), ("name", name.into()), ("value", value)],
        )
        .await
        .map(drop)
    }

    pub async fn get_property(&self, set_id: &str, name: &str) -> Result<Value> {
        let mut r = self
            .request("GetProperty", [("set_id", set_id.into()), ("name", name.into())])
            .await?;
        Ok(r.remove("value").unwrap_or(Value::Null))
    }

    pub async fn get_all(&self, set_id: &str) -> Result<ValueMap> {
        let mut r = self.request("GetAll", [("set_id", set_id.into())]).await?;
        r.remove("entries")
            .and_then(Value::into_map)
            .ok_or_else(|| ClientError::Protocol("missing entries".into()))
    }

    pub async fn delete_property(&self, set_id: &str, name: &str) -> Result<()> {
        self.request("DeleteProperty", [("set_id", set_id.into()), ("name", name.into())])
            .await
            .map(drop)
    }

    pub async fn create_log(&self, cfg: &LogConfig) -> Result<()> {
        self.request(
            "CreateLog",
            [
                ("log_id", cfg.log_id.as_str().into()),
                ("source_channel", id_value(cfg.source_channel)),
                (
                    "capture_filter",
                    cfg.capture_filter.as_ref().map_or(Value::Null, |c| print_constraint(c).into()),
                ),
                ("max_records", Value::Int(cfg.max_records as i64)),
                ("full_action", cfg.full_action.as_str().into()),
                (
                    "threshold_fractions",
                    Value::List(cfg.threshold_fractions.iter().map(|f| Value::Float(*f)).collect()),
                ),
                ("alarm_channel", cfg.alarm_channel.map_or(Value::Null, id_value)),
            ],
        )
        .await
        .map(drop)
    }

    pub async fn query(&self, log_id: &str, constraint: &Constraint, from_id: u64, max: usize) -> Result<QueryPage> {
        let r = self
            .request(
                "Query",
                [
                    ("log_id", log_id.into()),
                    ("constraint", print_constraint(constraint).into()),
                    ("from_id", id_value(from_id)),
                    ("max", Value::Int(max.min(i64::MAX as usize) as i64)),
                ],
            )
            .await?;
        let records = r
            .get("records")
            .and_then(Value::as_list)
            .ok_or_else(|| ClientError::Protocol("missing records".into()))?
            .iter()
            .map(|v| LogRecord::from_value(v.clone()).map_err(|e| ClientError::Protocol(e.to_string())))
            .collect::<Result<_>>()?;
        let next_id = match r.get("next_id") {
            Some(Value::Int(n)) => Some(*n as u64),
            _ => None,
        };
        Ok(QueryPage { records, next_id })
    }
}

fn route(routes: &Mutex<Routes>, msg: Message) {
    if msg.kind == "Deliver" && msg.request_id == 0 {
        let proxy = msg.args.get("proxy_id").and_then(Value::as_int);
        let delivery_id = msg.args.get("delivery_id").and_then(Value::as_int);
        let event = msg.args.get("event").cloned().map(StructuredEvent::from_value);
        if let (Some(proxy), Some(delivery_id), Some(Ok(event))) = (proxy, delivery_id, event) {
            if let Some(stream) = routes.lock().streams.get(&(proxy as u64)) {
                let _ = stream.send(Delivery {
                    delivery_id: delivery_id as u64,
                    event,
                });
            }
        }
        return;
    }
    let waiter = routes.lock().pending.remove(&msg.request_id);
    if let Some(w) = waiter {
        let _ = w.send(msg);
    }
}

fn id_value(id: u64) -> Value {
    Value::Int(id as i64)
}

fn int(r: &ValueMap, key: &str) -> Result<u64> {
    match r.get(key) {
        Some(Value::Int(n)) if *n >= 0 => Ok(*n as u64),
        _ => Err(ClientError::Protocol(format!("reply lacks `{key}`"))),
    }
}
