mod common;

use std::process::Command;
use std::time::Duration;

use common::{start, Raw};
use notibus_core::channel::{QosProfile, Reliability};
use notibus_core::event::StructuredEvent;
use notibus_core::filter::{parse_constraint, Constraint, Subscription};
use notibus_core::naming::{BindingKind, RefKind, ServiceRef};
use notibus_core::notifylog::LogConfig;
use notibus_core::value::Value;
use notibus_wire::{Client, PushStatus};
use tokio::io::AsyncWriteExt;

const GRACE: Duration = Duration::from_secs(5);

fn ev(n: i64) -> StructuredEvent {
    StructuredEvent::new("PS", "current").with_field("n", n)
}

#[tokio::test]
async fn hello_rules() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start(dir.path(), GRACE).await;
    let mut raw = Raw::connect(broker.addr).await;

    let id = raw.send("CreateChannel", &[]).await;
    let m = raw.recv().await.unwrap();
    assert_eq!((m.kind.as_str(), m.request_id), ("Error", id));
    assert_eq!(m.args["code"], Value::from("HelloRequired"));

    raw.send("Hello", &[("version", Value::Int(2))]).await;
    let m = raw.recv().await.unwrap();
    assert_eq!(m.args["code"], Value::from("ProtocolVersionMismatch"));

    raw.send("Hello", &[("version", Value::Int(1))]).await;
    let m = raw.recv().await.unwrap();
    assert_eq!(m.kind, "HelloOk");
    assert_eq!(m.args["version"], Value::Int(1));

    raw.send("Teleport", &[]).await;
    assert_eq!(raw.recv().await.unwrap().args["code"], Value::from("UnknownKind"));
    raw.send("Deliver", &[]).await;
    assert_eq!(raw.recv().await.unwrap().args["code"], Value::from("UnknownKind"));
}

#[tokio::test]
async fn naming_has_service_entries_at_start() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start(dir.path(), GRACE).await;
    let c = Client::connect(broker.addr).await.unwrap();
    assert_eq!(
        c.resolve("services/notify/factory").await.unwrap().kind,
        RefKind::ChannelFactory
    );
    assert_eq!(c.resolve("services/log").await.unwrap().kind, RefKind::Log);
    assert_eq!(c.resolve("services/properties").await.unwrap().kind, RefKind::PropertySet);
    assert_eq!(
        c.list(Some("services")).await.unwrap(),
        [
            ("log".to_owned(), BindingKind::Object),
            ("notify".to_owned(), BindingKind::Context),
            ("properties".to_owned(), BindingKind::Object),
        ]
    );
    let psu = ServiceRef::new(RefKind::PropertySet, "psu1");
    c.bind_new_context("devices").await.unwrap();
    c.bind("devices/psu1", &psu).await.unwrap();
    let err = c.bind("devices/psu1", &psu).await.unwrap_err();
    assert_eq!(err.code(), Some("AlreadyBound"));
    assert_eq!(c.resolve("devices/psu1").await.unwrap(), psu);
    assert_eq!(c.unbind("devices").await.unwrap_err().code(), Some("ContextNotEmpty"));
}

#[tokio::test]
async fn push_and_poll() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start(dir.path(), GRACE).await;
    let c = Client::connect(broker.addr).await.unwrap();
    let ch = c.create_channel(QosProfile::unset()).await.unwrap();
    let sup = c.connect_supplier(ch, QosProfile::unset()).await.unwrap();
    let filter = parse_constraint("$.n >= 2").unwrap();
    let con = c
        .connect_consumer(ch, &Subscription::new([("PS", "*")]), Some(&filter), QosProfile::unset())
        .await
        .unwrap();
    for n in 0..5 {
        assert_eq!(c.push(sup, &ev(n)).await.unwrap(), PushStatus::Accepted);
    }
    c.push(sup, &StructuredEvent::new("RF", "current").with_field("n", 9i64))
        .await
        .unwrap();
    assert_eq!(c.receive(con, 10).await.unwrap(), [ev(2), ev(3), ev(4)]);

    let err = c.push(con, &ev(1)).await.unwrap_err();
    assert_eq!(err.code(), Some("NoSuchProxy"));
    let err = c.receive(sup, 1).await.unwrap_err();
    assert_eq!(err.code(), Some("NoSuchProxy"));
    let bad = StructuredEvent::new("", "t");
    assert_eq!(c.push(sup, &bad).await.unwrap_err().code(), Some("InvalidEvent"));
    let err = c.connect_supplier(999, QosProfile::unset()).await.unwrap_err();
    assert_eq!(err.code(), Some("NoSuchChannel"));
}

#[tokio::test]
async fn push_mode_delivers_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start(dir.path(), GRACE).await;
    let supplier = Client::connect(broker.addr).await.unwrap();
    let consumer = Client::connect(broker.addr).await.unwrap();
    let ch = supplier.create_channel(QosProfile::unset()).await.unwrap();
    let sup = supplier.connect_supplier(ch, QosProfile::unset()).await.unwrap();
    let con = consumer
        .connect_consumer(ch, &Subscription::all(), None, QosProfile::unset())
        .await
        .unwrap();
    let mut stream = consumer.subscribe(con).await.unwrap();
    for n in 0..500 {
        supplier.push(sup, &ev(n)).await.unwrap();
    }
    for n in 0..500 {
        let d = stream.recv().await.unwrap();
        assert_eq!(d.event, ev(n));
    }
    let stats = consumer.stats(con).await.unwrap();
    assert_eq!((stats.enqueued, stats.delivered, stats.discarded), (500, 500, 0));
}

#[tokio::test]
async fn reliable_consumer_survives_reconnect() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start(dir.path(), GRACE).await;
    let supplier = Client::connect(broker.addr).await.unwrap();
    let ch = supplier
        .create_channel(QosProfile::unset().reliability(Reliability::Reliable))
        .await
        .unwrap();
    let sup = supplier.connect_supplier(ch, QosProfile::unset()).await.unwrap();

    let first = Client::connect(broker.addr).await.unwrap();
    let con = first
        .connect_consumer(ch, &Subscription::all(), None, QosProfile::unset())
        .await
        .unwrap();
    let mut stream = first.subscribe(con).await.unwrap();
    for n in 0..100 {
        supplier.push(sup, &ev(n)).await.unwrap();
    }
    // Take 40, acknowledge only 30, then vanish.
    let mut last = 0;
    for n in 0..40 {
        let d = stream.recv().await.unwrap();
        assert_eq!(d.event, ev(n));
        if n == 29 {
            last = d.delivery_id;
        }
    }
    first.ack(con, last).await.unwrap();
    drop(stream);
    drop(first);

    for n in 100..150 {
        supplier.push(sup, &ev(n)).await.unwrap();
    }
    tokio::time::sleep(Duration::from_millis(100)).await;

    let second = Client::connect(broker.addr).await.unwrap();
    let mut stream = second.subscribe(con).await.unwrap();
    let mut seen = Vec::new();
    while seen.len() < 120 {
        let d = stream.recv().await.unwrap();
        seen.push(d.event.field("n").and_then(Value::as_int).unwrap());
        second.ack_nowait(con, d.delivery_id).await.unwrap();
    }
    assert_eq!(seen, (30..150).collect::<Vec<_>>());
    let stats = second.stats(con).await.unwrap();
    assert_eq!((stats.enqueued, stats.discarded), (150, 0));
}

#[tokio::test]
async fn orphaned_proxies_go_away_after_grace() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start(dir.path(), Duration::from_millis(100)).await;
    let admin = Client::connect(broker.addr).await.unwrap();
    let ch = admin.create_channel(QosProfile::unset()).await.unwrap();
    let c = Client::connect(broker.addr).await.unwrap();
    let con = c
        .connect_consumer(ch, &Subscription::all(), None, QosProfile::unset())
        .await
        .unwrap();
    drop(c);
    tokio::time::sleep(Duration::from_millis(500)).await;
    assert_eq!(admin.stats(con).await.unwrap_err().code(), Some("NoSuchProxy"));
}

#[tokio::test]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let broker = start(dir.path(), GRACE).await;
        let c = Client::connect(broker.addr).await.unwrap();
        c.define_property("psu1", "max_current", Value::Float(10.0)).await.unwrap();
        c.define_property("psu1", "serial", Value::from("A-17")).await.unwrap();
        let ch = c.create_channel(QosProfile::unset()).await.unwrap();
        let sup = c.connect_supplier(ch, QosProfile::unset()).await.unwrap();
        c.create_log(&LogConfig::new("audit", ch, 100)).await.unwrap();
        for n in 0..3 {
            c.push(sup, &ev(n)).await.unwrap();
        }
        let mut tries = 0;
        while c.query("audit", &Constraint::Bool(true), 1, 10).await.unwrap().records.len() < 3 {
            tries += 1;
            assert!(tries < 500, "log never caught up");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        broker.shutdown().await;
    }
    let broker = start(dir.path(), GRACE).await;
    let c = Client::connect(broker.addr).await.unwrap();
    let all = c.get_all("psu1").await.unwrap();
    assert_eq!(all["max_current"], Value::Float(10.0));
    assert_eq!(all["serial"], Value::from("A-17"));
    let page = c.query("audit", &Constraint::Bool(true), 1, 10).await.unwrap();
    let ids: Vec<u64> = page.records.iter().map(|r| r.id).collect();
    assert_eq!(ids, [1, 2, 3]);
    assert_eq!(page.records[1].event, ev(1));
}

#[tokio::test]
async fn bad_frame_closes_only_that_session() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start(dir.path(), GRACE).await;
    let good = Client::connect(broker.addr).await.unwrap();

    let mut raw = Raw::connect(broker.addr).await;
    raw.hello().await;
    raw.stream.write_all(&7u32.to_be_bytes()).await.unwrap();
    raw.stream.write_all(b"garbage").await.unwrap();
    let m = raw.recv().await.unwrap();
    assert_eq!((m.kind.as_str(), m.request_id), ("Error", 0));
    assert_eq!(m.args["code"], Value::from("DecodeError"));
    assert!(raw.recv().await.is_none());

    let mut raw = Raw::connect(broker.addr).await;
    raw.stream.write_all(&u32::MAX.to_be_bytes()).await.unwrap();
    assert_eq!(raw.recv().await.unwrap().args["code"], Value::from("FrameTooLarge"));
    assert!(raw.recv().await.is_none());

    good.define_property("s", "k", Value::Int(1)).await.unwrap();
    assert_eq!(good.get_property("s", "k").await.unwrap(), Value::Int(1));
}

#[tokio::test]
async fn pipelined_requests_all_answered() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start(dir.path(), GRACE).await;
    let mut raw = Raw::connect(broker.addr).await;
    raw.hello().await;
    let mut sent = Vec::new();
    for i in 0..50 {
        sent.push(
            raw.send("DefineProperty", &[("set_id", "p".into()), ("name", format!("k{i}").into()), ("value", Value::Int(i))])
                .await,
        );
        sent.push(raw.send("GetProperty", &[("set_id", "nope".into()), ("name", "x".into())]).await);
    }
    let mut got = Vec::new();
    for _ in 0..sent.len() {
        got.push(raw.recv().await.unwrap().request_id);
    }
    got.sort();
    assert_eq!(got, sent);
}

#[test]
fn daemon_exits_nonzero_when_port_taken() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_notibusd"))
        .args(["--listen", &addr.to_string(), "--data-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cannot listen"), "{stderr}");
}

#[test]
fn daemon_needs_a_data_dir() {
    let out = Command::new(env!("CARGO_BIN_EXE_notibusd"))
        .args(["--listen", "127.0.0.1:0"])
        .env_remove("NOTIBUS_DATA_DIR")
        .output()
        .unwrap();
    assert!(!out.status.success());
}
