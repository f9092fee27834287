//! Network face of notibus: the framed message protocol, the broker that
//! serves it and an async client.

pub mod broker;
pub mod client;
mod dispatch;
pub mod frame;

pub use broker::{Broker, BrokerConfig, BrokerError, BrokerHandle, Services, DEFAULT_PORT, PROTOCOL_VERSION};
pub use client::{Client, ClientError, Delivery, ProxyStats, PushStatus};
pub use frame::{decode_frame, encode_frame, FrameError, Message, MAX_FRAME};
