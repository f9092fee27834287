//! Event channels: supplier and consumer proxies, per-consumer bounded
//! queues, filtering and QoS-aware fan-out.
//!
//! Locking: a channel's member lock serializes its pushes, and each consumer
//! queue has its own lock. Dispatch takes the member lock and then consumer
//! locks in proxy-id order; every other operation takes a single consumer
//! lock, so the ordering is deadlock free.

mod qos;
mod queue;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

pub use qos::{resolve_qos, DiscardPolicy, EffectiveQos, OrderPolicy, QosProfile, Reliability};
pub use queue::{ConsumerCounters, ConsumerQueue, Offer};

use crate::event::{validate_event, StructuredEvent, Violation};
use crate::filter::{eval_constraint, Constraint, Subscription};

pub type ChannelId = u64;
pub type ProxyId = u64;

/// Called after an event lands in a consumer queue or the consumer goes
/// away. Must be cheap and must not call back into the channel service.
pub type Waker = Arc<dyn Fn() + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("no such channel {0}")]
    NoSuchChannel(ChannelId),
    #[error("no such proxy {0}")]
    NoSuchProxy(ProxyId),
    #[error("invalid qos: {0}")]
    InvalidQos(String),
    #[error("invalid event: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidEvent(Vec<Violation>),
}

impl ChannelError {
    pub fn code(&self) -> &'static str {
        match self {
            ChannelError::NoSuchChannel(_) => "NoSuchChannel",
            ChannelError::NoSuchProxy(_) => "NoSuchProxy",
            ChannelError::InvalidQos(_) => "InvalidQos",
            ChannelError::InvalidEvent(_) => "InvalidEvent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    QueueFull,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::QueueFull => "QueueFull",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyRole {
    Supplier,
    Consumer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConsumerStats {
    pub enqueued: u64,
    pub delivered: u64,
    pub discarded: u64,
    /// Queued plus handed out but unacknowledged.
    pub queued: u64,
}

struct ConsumerState {
    subscription: Subscription,
    filter: Option<Constraint>,
    queue: ConsumerQueue,
    waker: Option<Waker>,
}

struct Consumer {
    /// Channel defaults overlaid with this proxy's overrides.
    qos: QosProfile,
    overrides: QosProfile,
    state: Mutex<ConsumerState>,
}

#[derive(Default)]
struct Members {
    suppliers: BTreeMap<ProxyId, QosProfile>,
    consumers: BTreeMap<ProxyId, Arc<Consumer>>,
}

struct Channel {
    default_qos: QosProfile,
    members: Mutex<Members>,
}

impl Channel {
    fn dispatch(&self, supplier: ProxyId, event: Arc<StructuredEvent>) -> Result<PushOutcome, ChannelError> {
        let members = self.members.lock();
        let supplier_qos = members
            .suppliers
            .get(&supplier)
            .ok_or(ChannelError::NoSuchProxy(supplier))?;
        let base = self.default_qos.overlaid(supplier_qos);
        let now = Instant::now();
        let mut targets = Vec::new();
        for consumer in members.consumers.values() {
            let st = consumer.state.lock();
            let wanted = st.subscription.matches(&event.header)
                && st.filter.as_ref().is_none_or(|f| eval_constraint(f, &event));
            if wanted {
                let qos = resolve_qos(&base, &consumer.overrides, &event.variable_header);
                targets.push((st, qos));
            }
        }
        let refuse = targets.iter_mut().any(|(st, q)| {
            q.reliability == Reliability::Reliable
                && q.discard_policy == DiscardPolicy::RejectNew
                && st.queue.is_full(q.queue_limit, now)
        });
        if refuse {
            return Ok(PushOutcome::Rejected(RejectReason::QueueFull));
        }
        let mut wakers = Vec::new();
        for (mut st, qos) in targets {
            if st.queue.offer(event.clone(), &qos, now) != Offer::DroppedNew {
                wakers.extend(st.waker.clone());
            }
        }
        drop(members);
        for w in wakers {
            w();
        }
        Ok(PushOutcome::Accepted)
    }
}

#[derive(Clone)]
enum Proxy {
    Supplier(Arc<Channel>),
    Consumer(Arc<Channel>, Arc<Consumer>),
}

/// All channels of one broker. Channel ids and proxy ids are unique for the
/// lifetime of the instance and increase monotonically from 1.
pub struct EventChannels {
    next_channel: AtomicU64,
    next_proxy: AtomicU64,
    channels: RwLock<HashMap<ChannelId, Arc<Channel>>>,
    proxies: RwLock<HashMap<ProxyId, Proxy>>,
}

impl Default for EventChannels {
    fn default() -> Self {
        Self::new()
    }
}

impl EventChannels {
    pub fn new() -> Self {
        EventChannels {
            next_channel: AtomicU64::new(1),
            next_proxy: AtomicU64::new(1),
            channels: RwLock::new(HashMap::new()),
            proxies: RwLock::new(HashMap::new()),
        }
    }

    pub fn create_channel(&self, default_qos: QosProfile) -> Result<ChannelId, ChannelError> {
        let missing = default_qos.missing_fields();
        if !missing.is_empty() {
            return Err(ChannelError::InvalidQos(format!("unset: {}", missing.join(", "))));
        }
        let mut channels = self.channels.write();
        let id = self.next_channel.fetch_add(1, Ordering::Relaxed);
        channels.insert(
            id,
            Arc::new(Channel {
                default_qos,
                members: Mutex::new(Members::default()),
            }),
        );
        Ok(id)
    }

    pub fn channel_exists(&self, id: ChannelId) -> bool {
        self.channels.read().contains_key(&id)
    }

    pub fn channel_qos(&self, id: ChannelId) -> Result<QosProfile, ChannelError> {
        Ok(self.channel(id)?.default_qos)
    }

    fn channel(&self, id: ChannelId) -> Result<Arc<Channel>, ChannelError> {
        self.channels
            .read()
            .get(&id)
            .cloned()
            .ok_or(ChannelError::NoSuchChannel(id))
    }

    fn proxy(&self, id: ProxyId) -> Result<Proxy, ChannelError> {
        self.proxies
            .read()
            .get(&id)
            .cloned()
            .ok_or(ChannelError::NoSuchProxy(id))
    }

    fn consumer(&self, id: ProxyId) -> Result<Arc<Consumer>, ChannelError> {
        match self.proxy(id)? {
            Proxy::Consumer(_, c) => Ok(c),
            Proxy::Supplier(_) => Err(ChannelError::NoSuchProxy(id)),
        }
    }

    pub fn proxy_role(&self, id: ProxyId) -> Option<ProxyRole> {
        self.proxies.read().get(&id).map(|p| match p {
            Proxy::Supplier(_) => ProxyRole::Supplier,
            Proxy::Consumer(..) => ProxyRole::Consumer,
        })
    }

    pub fn connect_supplier(&self, channel: ChannelId, overrides: QosProfile) -> Result<ProxyId, ChannelError> {
        let ch = self.channel(channel)?;
        let mut proxies = self.proxies.write();
        let id = self.next_proxy.fetch_add(1, Ordering::Relaxed);
        ch.members.lock().suppliers.insert(id, overrides);
        proxies.insert(id, Proxy::Supplier(ch));
        Ok(id)
    }

    /// The new consumer sees only events pushed after this call returns.
    pub fn connect_consumer(
        &self,
        channel: ChannelId,
        subscription: Subscription,
        filter: Option<Constraint>,
        overrides: QosProfile,
    ) -> Result<ProxyId, ChannelError> {
        let ch = self.channel(channel)?;
        let consumer = Arc::new(Consumer {
            qos: ch.default_qos.overlaid(&overrides),
            overrides,
            state: Mutex::new(ConsumerState {
                subscription,
                filter,
                queue: ConsumerQueue::new(),
                waker: None,
            }),
        });
        let mut proxies = self.proxies.write();
        let id = self.next_proxy.fetch_add(1, Ordering::Relaxed);
        ch.members.lock().consumers.insert(id, consumer.clone());
        proxies.insert(id, Proxy::Consumer(ch, consumer));
        Ok(id)
    }

    /// Replaces the filter. Events already queued stay queued.
    pub fn set_filter(&self, proxy: ProxyId, filter: Option<Constraint>) -> Result<(), ChannelError> {
        self.consumer(proxy)?.state.lock().filter = filter;
        Ok(())
    }

    pub fn push(&self, supplier: ProxyId, event: StructuredEvent) -> Result<PushOutcome, ChannelError> {
        self.push_shared(supplier, Arc::new(event))
    }

    pub fn push_shared(&self, supplier: ProxyId, event: Arc<StructuredEvent>) -> Result<PushOutcome, ChannelError> {
        let ch = match self.proxy(supplier)? {
            Proxy::Supplier(ch) => ch,
            Proxy::Consumer(..) => return Err(ChannelError::NoSuchProxy(supplier)),
        };
        validate_event(&event).map_err(ChannelError::InvalidEvent)?;
        ch.dispatch(supplier, event)
    }

    /// Polls up to `max` events, counting them delivered.
    pub fn receive(&self, consumer: ProxyId, max: usize) -> Result<Vec<Arc<StructuredEvent>>, ChannelError> {
        let c = self.consumer(consumer)?;
        let events = c.state.lock().queue.pop(max, Instant::now());
        Ok(events)
    }

    /// Hands out up to `max` events that stay accounted for until
    /// [`ack`](Self::ack)ed or [`discard_inflight`](Self::discard_inflight)ed.
    pub fn take_for_delivery(
        &self,
        consumer: ProxyId,
        max: usize,
    ) -> Result<Vec<(u64, Arc<StructuredEvent>)>, ChannelError> {
        let c = self.consumer(consumer)?;
        let batch = c.state.lock().queue.take_for_delivery(max, Instant::now());
        Ok(batch)
    }

    pub fn ack(&self, consumer: ProxyId, upto: u64) -> Result<usize, ChannelError> {
        Ok(self.consumer(consumer)?.state.lock().queue.ack(upto))
    }

    pub fn discard_inflight(&self, consumer: ProxyId, delivery_id: u64) -> Result<bool, ChannelError> {
        Ok(self
            .consumer(consumer)?
            .state
            .lock()
            .queue
            .discard_inflight(delivery_id))
    }

    /// The receiving end of handed-out events went away: reliable consumers
    /// get them back at the head of the queue, best-effort consumers count
    /// them delivered.
    pub fn recover_inflight(&self, consumer: ProxyId) -> Result<(), ChannelError> {
        let c = self.consumer(consumer)?;
        let mut st = c.state.lock();
        if c.qos.reliability == Some(Reliability::Reliable) {
            st.queue
                .requeue_inflight(c.qos.order_policy.unwrap_or(OrderPolicy::Fifo));
        } else {
            st.queue.ack_all_inflight();
        }
        Ok(())
    }

    /// Consumer QoS without per-event and per-supplier layers.
    pub fn consumer_qos(&self, consumer: ProxyId) -> Result<QosProfile, ChannelError> {
        Ok(self.consumer(consumer)?.qos)
    }

    pub fn set_waker(&self, consumer: ProxyId, waker: Option<Waker>) -> Result<(), ChannelError> {
        let c = self.consumer(consumer)?;
        let has_events = {
            let mut st = c.state.lock();
            st.waker = waker.clone();
            st.queue.queued() > 0
        };
        if let (true, Some(w)) = (has_events, waker) {
            w();
        }
        Ok(())
    }

    pub fn consumer_stats(&self, consumer: ProxyId) -> Result<ConsumerStats, ChannelError> {
        let c = self.consumer(consumer)?;
        let mut st = c.state.lock();
        st.queue.purge_expired(Instant::now());
        let counters = st.queue.counters();
        Ok(ConsumerStats {
            enqueued: counters.enqueued,
            delivered: counters.delivered,
            discarded: counters.discarded,
            queued: st.queue.occupancy() as u64,
        })
    }

    /// Removes the proxy. A consumer's pending events are counted discarded
    /// and its waker fires once more so a delivery loop can notice.
    pub fn disconnect(&self, proxy: ProxyId) -> Result<(), ChannelError> {
        let removed = self
            .proxies
            .write()
            .remove(&proxy)
            .ok_or(ChannelError::NoSuchProxy(proxy))?;
        match removed {
            Proxy::Supplier(ch) => {
                ch.members.lock().suppliers.remove(&proxy);
            }
            Proxy::Consumer(ch, consumer) => {
                ch.members.lock().consumers.remove(&proxy);
                let waker = {
                    let mut st = consumer.state.lock();
                    st.queue.discard_all();
                    st.waker.take()
                };
                if let Some(w) = waker {
                    w();
                }
            }
        }
        Ok(())
    }
}
