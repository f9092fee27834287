//! Core of the notibus event broker: structured events, constraint filters,
//! QoS-aware channels, naming, property sets and persistent logs.
//!
//! Everything here is synchronous and thread-safe; the network layer lives
//! in `notibus-wire`.

pub mod channel;
pub mod codec;
pub mod event;
pub mod filter;
pub mod naming;
pub mod notifylog;
pub mod property;
pub mod value;

pub use channel::{ChannelError, ChannelId, EventChannels, ProxyId, PushOutcome, QosProfile};
pub use event::{StructuredEvent, Violation};
pub use filter::{eval_constraint, parse_constraint, Constraint, Subscription};
pub use value::{Value, ValueMap};
