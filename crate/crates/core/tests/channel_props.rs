use notibus_core::channel::{DiscardPolicy, EventChannels, OrderPolicy, QosProfile, Reliability};
use notibus_core::event::StructuredEvent;
use notibus_core::filter::{parse_constraint, Subscription};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Push { priority: Option<i64> },
    Receive(usize),
    Take(usize),
    AckAll,
    DiscardFirst,
    Recover,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => proptest::option::of(-5i64..5).prop_map(|priority| Op::Push { priority }),
        2 => (0usize..4).prop_map(Op::Receive),
        2 => (0usize..4).prop_map(Op::Take),
        1 => Just(Op::AckAll),
        1 => Just(Op::DiscardFirst),
        1 => Just(Op::Recover),
    ]
}

fn qos() -> impl Strategy<Value = QosProfile> {
    (
        1usize..6,
        prop_oneof![
            Just(DiscardPolicy::DiscardOldest),
            Just(DiscardPolicy::DiscardNewest),
            Just(DiscardPolicy::RejectNew)
        ],
        prop_oneof![Just(OrderPolicy::Fifo), Just(OrderPolicy::Priority)],
        prop_oneof![Just(Reliability::BestEffort), Just(Reliability::Reliable)],
    )
        .prop_map(|(n, d, o, r)| QosProfile::unset().queue_limit(n).discard(d).order(o).reliability(r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// enqueued = delivered + discarded + queued holds after every step, and
    /// no queue ever holds more than its limit.
    #[test]
    fn counters_balance(consumers in proptest::collection::vec(qos(), 1..4), ops in proptest::collection::vec(op(), 0..80)) {
        let chans = EventChannels::new();
        let ch = chans.create_channel(QosProfile::DEFAULT_CHANNEL).unwrap();
        let sup = chans.connect_supplier(ch, QosProfile::unset()).unwrap();
        let filter = parse_constraint("$.n >= 0").unwrap();
        let ids: Vec<_> = consumers
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let f = (i % 2 == 1).then(|| filter.clone());
                (chans.connect_consumer(ch, Subscription::all(), f, *q).unwrap(), q.queue_limit.unwrap())
            })
            .collect();
        let mut inflight: Vec<Vec<u64>> = vec![Vec::new(); ids.len()];
        let mut n = 0i64;
        for op in ops {
            match op {
                Op::Push { priority } => {
                    let mut e = StructuredEvent::new("d", "t").with_field("n", n);
                    if let Some(p) = priority {
                        e = e.with_priority(p);
                    }
                    n += 1;
                    chans.push(sup, e).unwrap();
                }
                Op::Receive(k) => for (id, _) in &ids {
                    chans.receive(*id, k).unwrap();
                },
                Op::Take(k) => for (i, (id, _)) in ids.iter().enumerate() {
                    inflight[i].extend(chans.take_for_delivery(*id, k).unwrap().into_iter().map(|(d, _)| d));
                },
                Op::AckAll => for (i, (id, _)) in ids.iter().enumerate() {
                    if let Some(&last) = inflight[i].last() {
                        chans.ack(*id, last).unwrap();
                    }
                    inflight[i].clear();
                },
                Op::DiscardFirst => for (i, (id, _)) in ids.iter().enumerate() {
                    if !inflight[i].is_empty() {
                        let d = inflight[i].remove(0);
                        chans.discard_inflight(*id, d).unwrap();
                    }
                },
                Op::Recover => for (i, (id, _)) in ids.iter().enumerate() {
                    chans.recover_inflight(*id).unwrap();
                    inflight[i].clear();
                },
            }
            for (id, limit) in &ids {
                let s = chans.consumer_stats(*id).unwrap();
                prop_assert_eq!(s.enqueued, s.delivered + s.discarded + s.queued);
                prop_assert!(s.queued as usize <= *limit);
            }
        }
    }

    /// Every accepted event reaches every consumer whose queue never fills.
    #[test]
    fn fan_out_reaches_everyone(consumers in 1usize..8, events in 0usize..50) {
        let chans = EventChannels::new();
        let ch = chans.create_channel(QosProfile::DEFAULT_CHANNEL).unwrap();
        let sup = chans.connect_supplier(ch, QosProfile::unset()).unwrap();
        let ids: Vec<_> = (0..consumers)
            .map(|_| chans.connect_consumer(ch, Subscription::all(), None, QosProfile::unset()).unwrap())
            .collect();
        for n in 0..events {
            chans.push(sup, StructuredEvent::new("d", "t").with_field("n", n as i64)).unwrap();
        }
        for id in ids {
            let got = chans.receive(id, usize::MAX).unwrap();
            prop_assert_eq!(got.len(), events);
            for (i, e) in got.iter().enumerate() {
                prop_assert_eq!(e.field("n").and_then(|v| v.as_int()), Some(i as i64));
            }
        }
    }
}
