//! Structured events: the unit every channel, log and filter works on.

use std::fmt;

use thiserror::Error;

use crate::codec::{self, DecodeError};
use crate::value::{Value, ValueMap};

/// Variable-header key carrying the per-event priority.
pub const PRIORITY_KEY: &str = "priority";
/// Variable-header key carrying the per-event expiry, in milliseconds.
pub const TIMEOUT_KEY: &str = "timeout_ms";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FixedHeader {
    pub domain_name: String,
    pub type_name: String,
    pub event_name: String,
}

impl FixedHeader {
    pub fn new(
        domain_name: impl Into<String>,
        type_name: impl Into<String>,
        event_name: impl Into<String>,
    ) -> Self {
        FixedHeader {
            domain_name: domain_name.into(),
            type_name: type_name.into(),
            event_name: event_name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredEvent {
    pub header: FixedHeader,
    /// QoS hints. `priority` and `timeout_ms` are interpreted; any other key
    /// is carried along untouched.
    pub variable_header: ValueMap,
    /// Flat scalar fields visible to constraints.
    pub filterable_body: ValueMap,
    pub payload: Value,
}

impl StructuredEvent {
    pub fn new(domain: impl Into<String>, type_name: impl Into<String>) -> Self {
        StructuredEvent {
            header: FixedHeader::new(domain, type_name, ""),
            variable_header: ValueMap::new(),
            filterable_body: ValueMap::new(),
            payload: Value::Null,
        }
    }

    pub fn named(mut self, event_name: impl Into<String>) -> Self {
        self.header.event_name = event_name.into();
        self
    }

    pub fn with_field(mut self, key: impl Into<String>, v: impl Into<Value>) -> Self {
        self.filterable_body.insert(key.into(), v.into());
        self
    }

    pub fn with_priority(mut self, priority: i64) -> Self {
        self.variable_header.insert(PRIORITY_KEY.into(), Value::Int(priority));
        self
    }

    pub fn with_timeout_ms(mut self, timeout_ms: i64) -> Self {
        self.variable_header.insert(TIMEOUT_KEY.into(), Value::Int(timeout_ms));
        self
    }

    pub fn with_payload(mut self, payload: impl Into<Value>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn priority(&self) -> Option<i64> {
        self.variable_header.get(PRIORITY_KEY).and_then(Value::as_int)
    }

    pub fn timeout_ms(&self) -> Option<i64> {
        self.variable_header
            .get(TIMEOUT_KEY)
            .and_then(Value::as_int)
            .filter(|t| *t >= 0)
    }

    pub fn field(&self, key: &str) -> Option<&Value> {
        self.filterable_body.get(key)
    }

    /// Map form used inside wire messages and log records.
    pub fn to_value(&self) -> Value {
        let mut header = ValueMap::new();
        header.insert("domain_name".into(), self.header.domain_name.clone().into());
        header.insert("type_name".into(), self.header.type_name.clone().into());
        header.insert("event_name".into(), self.header.event_name.clone().into());
        let mut m = ValueMap::new();
        m.insert("header".into(), Value::Map(header));
        m.insert("variable_header".into(), Value::Map(self.variable_header.clone()));
        m.insert("filterable_body".into(), Value::Map(self.filterable_body.clone()));
        m.insert("payload".into(), self.payload.clone());
        Value::Map(m)
    }

    /// Inverse of [`to_value`](Self::to_value). Only checks shape; call
    /// [`validate_event`] for the content invariants.
    pub fn from_value(v: Value) -> Result<Self, DecodeError> {
        let shape = |reason: &str| DecodeError {
            position: 0,
            reason: format!("event shape: {reason}"),
        };
        let mut m = v.into_map().ok_or_else(|| shape("not a map"))?;
        let mut take_map = |key: &str| match m.remove(key) {
            Some(Value::Map(inner)) => Ok(inner),
            _ => Err(shape(&format!("missing map `{key}`"))),
        };
        let mut header = take_map("header")?;
        let variable_header = take_map("variable_header")?;
        let filterable_body = take_map("filterable_body")?;
        let payload = m.remove("payload").ok_or_else(|| shape("missing `payload`"))?;
        if let Some(extra) = m.keys().next() {
            return Err(shape(&format!("unknown key `{extra}`")));
        }
        let mut take_str = |key: &str| match header.remove(key) {
            Some(Value::Str(s)) => Ok(s),
            _ => Err(shape(&format!("header `{key}` must be a string"))),
        };
        let fixed = FixedHeader {
            domain_name: take_str("domain_name")?,
            type_name: take_str("type_name")?,
            event_name: take_str("event_name")?,
        };
        if let Some(extra) = header.keys().next() {
            return Err(shape(&format!("unknown header key `{extra}`")));
        }
        Ok(StructuredEvent {
            header: fixed,
            variable_header,
            filterable_body,
            payload,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DomainNameEmpty,
    TypeNameEmpty,
    NonFlatField(String),
    NanField(String),
    PriorityNotInt,
    TimeoutInvalid,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DomainNameEmpty => f.write_str("domain_name empty"),
            Violation::TypeNameEmpty => f.write_str("type_name empty"),
            Violation::NonFlatField(k) => write!(f, "non-flat filterable field `{k}`"),
            Violation::NanField(k) => write!(f, "NaN in filterable field `{k}`"),
            Violation::PriorityNotInt => f.write_str("priority is not an int"),
            Violation::TimeoutInvalid => f.write_str("timeout_ms is not a non-negative int"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EventError {
    #[error("invalid event: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

fn join_violations(vs: &[Violation]) -> String {
    vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Checks every content invariant and names all that fail.
pub fn validate_event(e: &StructuredEvent) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if e.header.domain_name.is_empty() {
        out.push(Violation::DomainNameEmpty);
    }
    if e.header.type_name.is_empty() {
        out.push(Violation::TypeNameEmpty);
    }
    for (k, v) in &e.filterable_body {
        match v {
            Value::Float(f) if f.is_nan() => out.push(Violation::NanField(k.clone())),
            v if !v.is_scalar() => out.push(Violation::NonFlatField(k.clone())),
            _ => {}
        }
    }
    match e.variable_header.get(PRIORITY_KEY) {
        None | Some(Value::Int(_)) => {}
        Some(_) => out.push(Violation::PriorityNotInt),
    }
    match e.variable_header.get(TIMEOUT_KEY) {
        None => {}
        Some(Value::Int(t)) if *t >= 0 => {}
        Some(_) => out.push(Violation::TimeoutInvalid),
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn encode_event(e: &StructuredEvent) -> Result<Vec<u8>, EventError> {
    validate_event(e).map_err(EventError::Invalid)?;
    Ok(codec::encode_value(&e.to_value()).into_bytes())
}

pub fn decode_event(bytes: &[u8]) -> Result<StructuredEvent, EventError> {
    let v = codec::decode_value(bytes)?;
    let e = StructuredEvent::from_value(v)?;
    validate_event(&e).map_err(EventError::Invalid)?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> StructuredEvent {
        StructuredEvent::new("PS", "current")
    }

    #[test]
    fn minimal_event_is_valid() {
        assert_eq!(validate_event(&minimal()), Ok(()));
    }

    #[test]
    fn empty_type_name_is_named() {
        let mut e = minimal();
        e.header.type_name.clear();
        assert_eq!(validate_event(&e), Err(vec![Violation::TypeNameEmpty]));
        assert_eq!(Violation::TypeNameEmpty.to_string(), "type_name empty");
    }

    #[test]
    fn list_in_filterable_body_is_named() {
        let e = minimal().with_field("xs", Value::List(vec![Value::Int(1)]));
        let errs = validate_event(&e).unwrap_err();
        assert_eq!(errs, vec![Violation::NonFlatField("xs".into())]);
        assert!(errs[0].to_string().starts_with("non-flat filterable field"));
    }

    #[test]
    fn all_violations_reported() {
        let mut e = StructuredEvent::new("", "")
            .with_field("m", Value::Map(ValueMap::new()))
            .with_field("n", f64::NAN)
            .with_timeout_ms(-1);
        e.variable_header.insert(PRIORITY_KEY.into(), "high".into());
        assert_eq!(validate_event(&e).unwrap_err().len(), 6);
    }

    #[test]
    fn nan_allowed_in_payload() {
        let e = minimal().with_payload(Value::List(vec![f64::NAN.into()]));
        assert_eq!(validate_event(&e), Ok(()));
        assert_eq!(decode_event(&encode_event(&e).unwrap()).unwrap(), e);
    }

    #[test]
    fn unknown_variable_header_keys_survive() {
        let mut e = minimal();
        e.variable_header.insert("x-trace".into(), Value::Bytes(vec![1, 2]));
        assert_eq!(decode_event(&encode_event(&e).unwrap()).unwrap(), e);
    }

    #[test]
    fn encode_rejects_invalid() {
        let mut e = minimal();
        e.header.domain_name.clear();
        assert!(matches!(encode_event(&e), Err(EventError::Invalid(_))));
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let a = minimal().with_field("z", 1).with_field("a", 2);
        let b = minimal().with_field("a", 2).with_field("z", 1);
        assert_eq!(encode_event(&a).unwrap(), encode_event(&b).unwrap());
    }

    #[test]
    fn truncated_is_decode_error() {
        let bytes = encode_event(&minimal().with_field("v", 3.5)).unwrap();
        for cut in 0..bytes.len() {
            assert!(matches!(decode_event(&bytes[..cut]), Err(EventError::Decode(_))));
        }
    }

    #[test]
    fn hand_edited_string_priority_is_invalid() {
        let text = String::from_utf8(encode_event(&minimal().with_priority(3)).unwrap()).unwrap();
        assert!(text.contains("\"priority\":3"));
        let edited = text.replace("\"priority\":3", "\"priority\":\"3\"");
        assert_eq!(
            decode_event(edited.as_bytes()),
            Err(EventError::Invalid(vec![Violation::PriorityNotInt]))
        );
    }

    #[test]
    fn canonical_text_shape() {
        let e = minimal().named("set").with_field("v", 1.5).with_priority(2);
        let text = String::from_utf8(encode_event(&e).unwrap()).unwrap();
        assert_eq!(
            text,
            "{\"filterable_body\":{\"v\":1.5},\"header\":{\"domain_name\":\"PS\",\
             \"event_name\":\"set\",\"type_name\":\"current\"},\"payload\":null,\
             \"variable_header\":{\"priority\":2}}"
        );
    }
}
