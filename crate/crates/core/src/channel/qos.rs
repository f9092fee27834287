use std::fmt;
use std::str::FromStr;

use crate::event::{PRIORITY_KEY, TIMEOUT_KEY};
use crate::value::{Value, ValueMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardPolicy {
    DiscardOldest,
    DiscardNewest,
    /// Under `Reliable` the push is refused; under `BestEffort` the new event
    /// is dropped for the full consumer only.
    RejectNew,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderPolicy {
    Fifo,
    /// Descending priority, FIFO among equal priorities.
    Priority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reliability {
    BestEffort,
    Reliable,
}

macro_rules! named_enum {
    ($ty:ident { $($variant:ident),* }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => stringify!($variant)),* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                $(if s.eq_ignore_ascii_case(stringify!($variant)) {
                    return Ok($ty::$variant);
                })*
                Err(format!("unknown {} `{s}`", stringify!($ty)))
            }
        }
    };
}

named_enum!(DiscardPolicy { DiscardOldest, DiscardNewest, RejectNew });
named_enum!(OrderPolicy { Fifo, Priority });
named_enum!(Reliability { BestEffort, Reliable });

/// A layer of QoS settings. Unset fields fall through to the layer below.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QosProfile {
    pub queue_limit: Option<usize>,
    pub discard_policy: Option<DiscardPolicy>,
    pub order_policy: Option<OrderPolicy>,
    pub reliability: Option<Reliability>,
}

impl QosProfile {
    /// The channel defaults: 1000 events, discard oldest, FIFO, best effort.
    pub const DEFAULT_CHANNEL: QosProfile = QosProfile {
        queue_limit: Some(1000),
        discard_policy: Some(DiscardPolicy::DiscardOldest),
        order_policy: Some(OrderPolicy::Fifo),
        reliability: Some(Reliability::BestEffort),
    };

    pub fn unset() -> Self {
        QosProfile::default()
    }

    pub fn queue_limit(mut self, n: usize) -> Self {
        self.queue_limit = Some(n);
        self
    }

    pub fn discard(mut self, p: DiscardPolicy) -> Self {
        self.discard_policy = Some(p);
        self
    }

    pub fn order(mut self, p: OrderPolicy) -> Self {
        self.order_policy = Some(p);
        self
    }

    pub fn reliability(mut self, r: Reliability) -> Self {
        self.reliability = Some(r);
        self
    }

    /// Names of unset fields, or of fields holding an invalid value.
    pub fn missing_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !matches!(self.queue_limit, Some(n) if n >= 1) {
            out.push("queue_limit");
        }
        if self.discard_policy.is_none() {
            out.push("discard_policy");
        }
        if self.order_policy.is_none() {
            out.push("order_policy");
        }
        if self.reliability.is_none() {
            out.push("reliability");
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.missing_fields().is_empty()
    }

    /// `over` wins wherever it is set.
    pub fn overlaid(&self, over: &QosProfile) -> QosProfile {
        QosProfile {
            queue_limit: over.queue_limit.or(self.queue_limit),
            discard_policy: over.discard_policy.or(self.discard_policy),
            order_policy: over.order_policy.or(self.order_policy),
            reliability: over.reliability.or(self.reliability),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut m = ValueMap::new();
        if let Some(n) = self.queue_limit {
            m.insert("queue_limit".into(), Value::Int(n as i64));
        }
        if let Some(p) = self.discard_policy {
            m.insert("discard_policy".into(), p.as_str().into());
        }
        if let Some(p) = self.order_policy {
            m.insert("order_policy".into(), p.as_str().into());
        }
        if let Some(r) = self.reliability {
            m.insert("reliability".into(), r.as_str().into());
        }
        Value::Map(m)
    }

    pub fn from_value(v: &Value) -> Result<Self, String> {
        let m = match v {
            Value::Null => return Ok(QosProfile::default()),
            Value::Map(m) => m,
            other => return Err(format!("qos must be a map, got {}", other.type_name())),
        };
        let mut qos = QosProfile::default();
        for (k, v) in m {
            match (k.as_str(), v) {
                ("queue_limit", Value::Int(n)) if *n >= 1 => qos.queue_limit = Some(*n as usize),
                ("discard_policy", Value::Str(s)) => qos.discard_policy = Some(s.parse()?),
                ("order_policy", Value::Str(s)) => qos.order_policy = Some(s.parse()?),
                ("reliability", Value::Str(s)) => qos.reliability = Some(s.parse()?),
                (k, v) => return Err(format!("bad qos field `{k}` = {v}")),
            }
        }
        Ok(qos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveQos {
    pub queue_limit: usize,
    pub discard_policy: DiscardPolicy,
    pub order_policy: OrderPolicy,
    pub reliability: Reliability,
    pub priority: i64,
    pub timeout_ms: Option<u64>,
}

/// Field-wise layering: recognized per-event keys, then the proxy, then the
/// channel. Fields the channel leaves unset fall back to the channel defaults.
pub fn resolve_qos(channel: &QosProfile, proxy: &QosProfile, variable_header: &ValueMap) -> EffectiveQos {
    let merged = QosProfile::DEFAULT_CHANNEL.overlaid(channel).overlaid(proxy);
    let priority = match variable_header.get(PRIORITY_KEY) {
        Some(Value::Int(p)) => *p,
        _ => 0,
    };
    let timeout_ms = match variable_header.get(TIMEOUT_KEY) {
        Some(Value::Int(t)) if *t >= 0 => Some(*t as u64),
        _ => None,
    };
    EffectiveQos {
        queue_limit: merged.queue_limit.unwrap_or(1).max(1),
        discard_policy: merged.discard_policy.unwrap_or(DiscardPolicy::DiscardOldest),
        order_policy: merged.order_policy.unwrap_or(OrderPolicy::Fifo),
        reliability: merged.reliability.unwrap_or(Reliability::BestEffort),
        priority,
        timeout_ms,
    }
}
