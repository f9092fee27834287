use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::qos::{DiscardPolicy, EffectiveQos, OrderPolicy};
use crate::event::StructuredEvent;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConsumerCounters {
    /// Events that matched this consumer and were offered to its queue.
    pub enqueued: u64,
    pub delivered: u64,
    pub discarded: u64,
}

#[derive(Debug, Clone)]
struct Queued {
    event: Arc<StructuredEvent>,
    seq: u64,
    priority: i64,
    deadline: Option<Instant>,
}

impl Queued {
    fn expired(&self, now: Instant) -> bool {
        self.deadline.is_some_and(|d| now >= d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offer {
    Enqueued,
    /// Queue was full; the oldest queued event was dropped to make room.
    DroppedOldest,
    /// Queue was full; the offered event was dropped.
    DroppedNew,
}

/// Bounded per-consumer queue plus the window of events handed out but not
/// yet acknowledged. Both count against the queue limit.
#[derive(Debug, Default)]
pub struct ConsumerQueue {
    queue: VecDeque<Queued>,
    inflight: VecDeque<(u64, Queued)>,
    next_seq: u64,
    next_delivery: u64,
    counters: ConsumerCounters,
}

impl ConsumerQueue {
    pub fn new() -> Self {
        ConsumerQueue::default()
    }

    pub fn counters(&self) -> ConsumerCounters {
        self.counters
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn inflight(&self) -> usize {
        self.inflight.len()
    }

    pub fn occupancy(&self) -> usize {
        self.queue.len() + self.inflight.len()
    }

    /// Drops queued events whose timeout elapsed. Returns how many.
    pub fn purge_expired(&mut self, now: Instant) -> usize {
        let before = self.queue.len();
        self.queue.retain(|q| !q.expired(now));
        let n = before - self.queue.len();
        self.counters.discarded += n as u64;
        n
    }

    pub fn is_full(&mut self, limit: usize, now: Instant) -> bool {
        self.purge_expired(now);
        self.occupancy() >= limit
    }

    pub fn offer(&mut self, event: Arc<StructuredEvent>, qos: &EffectiveQos, now: Instant) -> Offer {
        self.purge_expired(now);
        self.counters.enqueued += 1;
        let mut outcome = Offer::Enqueued;
        if self.occupancy() >= qos.queue_limit {
            match qos.discard_policy {
                DiscardPolicy::DiscardOldest if !self.queue.is_empty() => {
                    self.remove_oldest();
                    self.counters.discarded += 1;
                    outcome = Offer::DroppedOldest;
                }
                _ => {
                    self.counters.discarded += 1;
                    return Offer::DroppedNew;
                }
            }
        }
        let item = Queued {
            event,
            seq: self.next_seq,
            priority: qos.priority,
            deadline: qos.timeout_ms.map(|t| now + Duration::from_millis(t)),
        };
        self.next_seq += 1;
        match qos.order_policy {
            OrderPolicy::Fifo => self.queue.push_back(item),
            OrderPolicy::Priority => {
                let at = self.queue.partition_point(|q| q.priority >= item.priority);
                self.queue.insert(at, item);
            }
        }
        outcome
    }

    fn remove_oldest(&mut self) {
        if let Some((idx, _)) = self.queue.iter().enumerate().min_by_key(|(_, q)| q.seq) {
            self.queue.remove(idx);
        }
    }

    /// Dequeues up to `max` events and counts them delivered.
    pub fn pop(&mut self, max: usize, now: Instant) -> Vec<Arc<StructuredEvent>> {
        self.purge_expired(now);
        let n = max.min(self.queue.len());
        self.counters.delivered += n as u64;
        self.queue.drain(..n).map(|q| q.event).collect()
    }

    /// Moves up to `max` events into the unacknowledged window and returns
    /// them with their delivery ids.
    pub fn take_for_delivery(&mut self, max: usize, now: Instant) -> Vec<(u64, Arc<StructuredEvent>)> {
        self.purge_expired(now);
        let n = max.min(self.queue.len());
        let mut out = Vec::with_capacity(n);
        for q in self.queue.drain(..n) {
            self.next_delivery += 1;
            out.push((self.next_delivery, q.event.clone()));
            self.inflight.push_back((self.next_delivery, q));
        }
        out
    }

    /// Cumulative acknowledgement of every delivery id up to `upto`.
    pub fn ack(&mut self, upto: u64) -> usize {
        let mut n = 0;
        while self.inflight.front().is_some_and(|(id, _)| *id <= upto) {
            self.inflight.pop_front();
            n += 1;
        }
        self.counters.delivered += n as u64;
        n
    }

    /// Drops one unacknowledged delivery, counting it discarded.
    pub fn discard_inflight(&mut self, delivery_id: u64) -> bool {
        match self.inflight.iter().position(|(id, _)| *id == delivery_id) {
            Some(idx) => {
                self.inflight.remove(idx);
                self.counters.discarded += 1;
                true
            }
            None => false,
        }
    }

    /// Puts unacknowledged deliveries back at the head of the queue so they
    /// are handed out again.
    pub fn requeue_inflight(&mut self, order: OrderPolicy) {
        while let Some((_, q)) = self.inflight.pop_back() {
            self.queue.push_front(q);
        }
        if order == OrderPolicy::Priority {
            self.queue
                .make_contiguous()
                .sort_by(|a, b| b.priority.cmp(&a.priority).then(a.seq.cmp(&b.seq)));
        }
    }

    pub fn ack_all_inflight(&mut self) {
        if let Some((last, _)) = self.inflight.back() {
            let last = *last;
            self.ack(last);
        }
    }

    /// Empties everything, counting it discarded.
    pub fn discard_all(&mut self) {
        let n = self.occupancy() as u64;
        self.queue.clear();
        self.inflight.clear();
        self.counters.discarded += n;
    }

    pub fn check_identity(&self) -> bool {
        let c = self.counters;
        c.enqueued == c.delivered + c.discarded + self.occupancy() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::qos::Reliability;
    use crate::value::Value;

    fn qos(limit: usize, discard: DiscardPolicy, order: OrderPolicy) -> EffectiveQos {
        EffectiveQos {
            queue_limit: limit,
            discard_policy: discard,
            order_policy: order,
            reliability: Reliability::BestEffort,
            priority: 0,
            timeout_ms: None,
        }
    }

    fn ev(n: i64) -> Arc<StructuredEvent> {
        Arc::new(StructuredEvent::new("d", "t").with_field("n", n))
    }

    fn ns(events: &[Arc<StructuredEvent>]) -> Vec<i64> {
        events
            .iter()
            .map(|e| match e.field("n") {
                Some(Value::Int(n)) => *n,
                _ => panic!(),
            })
            .collect()
    }

    #[test]
    fn discard_oldest_keeps_suffix() {
        let now = Instant::now();
        let mut q = ConsumerQueue::new();
        let p = qos(10, DiscardPolicy::DiscardOldest, OrderPolicy::Fifo);
        for i in 1..=25 {
            q.offer(ev(i), &p, now);
        }
        assert_eq!(ns(&q.pop(100, now)), (16..=25).collect::<Vec<_>>());
        assert_eq!(q.counters().discarded, 15);
        assert!(q.check_identity());
    }

    #[test]
    fn discard_newest_keeps_prefix() {
        let now = Instant::now();
        let mut q = ConsumerQueue::new();
        let p = qos(10, DiscardPolicy::DiscardNewest, OrderPolicy::Fifo);
        for i in 1..=25 {
            q.offer(ev(i), &p, now);
        }
        assert_eq!(ns(&q.pop(100, now)), (1..=10).collect::<Vec<_>>());
        assert_eq!(q.counters().discarded, 15);
    }

    #[test]
    fn priority_order() {
        let now = Instant::now();
        let mut q = ConsumerQueue::new();
        let mut p = qos(10, DiscardPolicy::DiscardOldest, OrderPolicy::Priority);
        for (n, prio) in [(1, 5), (2, 1), (3, 9), (4, 5)] {
            p.priority = prio;
            q.offer(ev(n), &p, now);
        }
        assert_eq!(ns(&q.pop(10, now)), vec![3, 1, 4, 2]);
    }

    #[test]
    fn priority_discard_oldest_drops_earliest_arrival() {
        let now = Instant::now();
        let mut q = ConsumerQueue::new();
        let mut p = qos(2, DiscardPolicy::DiscardOldest, OrderPolicy::Priority);
        for (n, prio) in [(1, 9), (2, 1), (3, 5)] {
            p.priority = prio;
            q.offer(ev(n), &p, now);
        }
        assert_eq!(ns(&q.pop(10, now)), vec![3, 2]);
    }

    #[test]
    fn zero_timeout_never_delivered() {
        let now = Instant::now();
        let mut q = ConsumerQueue::new();
        let mut p = qos(10, DiscardPolicy::DiscardOldest, OrderPolicy::Fifo);
        p.timeout_ms = Some(0);
        q.offer(ev(1), &p, now);
        assert!(q.pop(10, now).is_empty());
        assert_eq!(q.counters().discarded, 1);
        assert!(q.check_identity());
    }

    #[test]
    fn timeout_elapses() {
        let now = Instant::now();
        let mut q = ConsumerQueue::new();
        let mut p = qos(10, DiscardPolicy::DiscardOldest, OrderPolicy::Fifo);
        p.timeout_ms = Some(50);
        q.offer(ev(1), &p, now);
        assert_eq!(q.pop(10, now + Duration::from_millis(49)).len(), 1);
        q.offer(ev(2), &p, now);
        assert!(q.pop(10, now + Duration::from_millis(50)).is_empty());
    }

    #[test]
    fn inflight_ack_requeue() {
        let now = Instant::now();
        let mut q = ConsumerQueue::new();
        let p = qos(3, DiscardPolicy::RejectNew, OrderPolicy::Fifo);
        for i in 1..=3 {
            q.offer(ev(i), &p, now);
        }
        let batch = q.take_for_delivery(2, now);
        assert_eq!(batch.iter().map(|(id, _)| *id).collect::<Vec<_>>(), vec![1, 2]);
        assert!(q.is_full(3, now), "inflight counts toward the limit");
        assert_eq!(q.ack(1), 1);
        q.requeue_inflight(OrderPolicy::Fifo);
        let again = q.take_for_delivery(10, now);
        assert_eq!(again.iter().map(|(id, _)| *id).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(ns(&again.into_iter().map(|(_, e)| e).collect::<Vec<_>>()), vec![2, 3]);
        assert!(q.discard_inflight(3));
        assert!(!q.discard_inflight(3));
        q.ack(4);
        assert_eq!(
            q.counters(),
            ConsumerCounters {
                enqueued: 3,
                delivered: 2,
                discarded: 1
            }
        );
        assert!(q.check_identity());
    }
}
