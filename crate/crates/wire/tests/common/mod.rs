#![allow(dead_code)]

use std::time::Duration;

use notibus_core::value::Value;
use notibus_wire::frame::{encode_frame, read_message, Message};
use notibus_wire::{Broker, BrokerConfig, BrokerHandle};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;

pub async fn start(dir: &std::path::Path, grace: Duration) -> BrokerHandle {
    let mut cfg = BrokerConfig::new("127.0.0.1:0", dir);
    cfg.reconnect_grace = grace;
    Broker::bind(&cfg).await.unwrap().spawn()
}

/// A bare connection speaking frames directly, for tests that need to see
/// exactly what crosses the socket.
pub struct Raw {
    pub stream: TcpStream,
    next: u64,
}

impl Raw {
    pub async fn connect(addr: std::net::SocketAddr) -> Raw {
        Raw {
            stream: TcpStream::connect(addr).await.unwrap(),
            next: 1,
        }
    }

    pub async fn send(&mut self, kind: &str, args: &[(&str, Value)]) -> u64 {
        let id = self.next;
        self.next += 1;
        let mut m = Message::new(kind, id);
        for (k, v) in args {
            m = m.arg(k, v.clone());
        }
        self.stream.write_all(&encode_frame(&m).unwrap()).await.unwrap();
        id
    }

    pub async fn recv(&mut self) -> Option<Message> {
        tokio::time::timeout(Duration::from_secs(10), read_message(&mut self.stream))
            .await
            .expect("reply in time")
            .ok()
            .flatten()
    }

    pub async fn hello(&mut self) {
        self.send("Hello", &[("version", Value::Int(1))]).await;
        assert_eq!(self.recv().await.unwrap().kind, "HelloOk");
    }
}
