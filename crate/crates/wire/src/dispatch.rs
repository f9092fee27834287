//! Maps each request kind onto the service operation of the same name.

use std::sync::Arc;

use notibus_core::channel::{ChannelError, ProxyId, ProxyRole, PushOutcome, QosProfile};
use notibus_core::event::StructuredEvent;
use notibus_core::filter::{parse_constraint, Constraint, Subscription};
use notibus_core::naming::{Name, NamingError, ServiceRef};
use notibus_core::notifylog::{FullAction, LogConfig, LogError};
use notibus_core::property::PropertyError;
use notibus_core::value::{Value, ValueMap};

use crate::broker::{Services, Session, PROTOCOL_VERSION};
use crate::frame::Message;

const DEFAULT_QUERY_MAX: i64 = 1000;

pub(crate) struct Fault {
    code: &'static str,
    message: String,
}

impl Fault {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Fault {
            code,
            message: message.into(),
        }
    }

    fn bad(message: impl Into<String>) -> Self {
        Fault::new("BadRequest", message)
    }
}

macro_rules! fault_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Fault {
            fn from(e: $t) -> Self {
                Fault::new(e.code(), e.to_string())
            }
        }
    )*};
}

fault_from!(ChannelError, NamingError, PropertyError, LogError);

pub fn error_message(request_id: u64, code: &str, message: &str) -> Message {
    Message::new("Error", request_id)
        .arg("code", code)
        .arg("message", message)
}

struct Args<'a>(&'a ValueMap);

impl<'a> Args<'a> {
    /// Absent and null both count as missing.
    fn opt(&self, key: &str) -> Option<&'a Value> {
        self.0.get(key).filter(|v| !matches!(v, Value::Null))
    }

    fn get(&self, key: &str) -> Result<&'a Value, Fault> {
        self.opt(key).ok_or_else(|| Fault::bad(format!("missing argument `{key}`")))
    }

    fn int(&self, key: &str) -> Result<i64, Fault> {
        self.get(key)?
            .as_int()
            .ok_or_else(|| Fault::bad(format!("`{key}` must be an int")))
    }

    fn id(&self, key: &str) -> Result<u64, Fault> {
        match self.int(key)? {
            n if n >= 0 => Ok(n as u64),
            _ => Err(Fault::bad(format!("`{key}` must not be negative"))),
        }
    }

    fn str(&self, key: &str) -> Result<&'a str, Fault> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| Fault::bad(format!("`{key}` must be a string")))
    }

    fn name(&self) -> Result<Name, Fault> {
        Ok(Name::parse(self.str("name")?)?)
    }

    fn qos(&self) -> Result<QosProfile, Fault> {
        QosProfile::from_value(self.opt("qos").unwrap_or(&Value::Null))
            .map_err(|e| Fault::new("InvalidQos", e))
    }

    fn filter(&self, key: &str) -> Result<Option<Constraint>, Fault> {
        match self.opt(key) {
            None => Ok(None),
            Some(Value::Str(text)) => parse_constraint(text)
                .map(Some)
                .map_err(|e| Fault::new("ParseError", e.to_string())),
            Some(_) => Err(Fault::bad(format!("`{key}` must be a string"))),
        }
    }

    fn subscription(&self) -> Result<Subscription, Fault> {
        let Some(list) = self.opt("subscription") else {
            return Ok(Subscription::all());
        };
        let bad = || Fault::bad("subscription must be a list of [domain, type] pairs");
        let mut patterns = Vec::new();
        for pair in list.as_list().ok_or_else(bad)? {
            match pair.as_list() {
                Some([Value::Str(d), Value::Str(t)]) => patterns.push((d.clone(), t.clone())),
                _ => return Err(bad()),
            }
        }
        Ok(Subscription { patterns })
    }

    fn service_ref(&self) -> Result<ServiceRef, Fault> {
        ServiceRef::from_value(self.get("ref")?).map_err(Fault::bad)
    }
}

fn reply(pairs: impl IntoIterator<Item = (&'static str, Value)>) -> ValueMap {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

/// Answers one request. The reply always carries the request's id.
pub(crate) fn handle(services: &Arc<Services>, session: &mut Session, msg: Message) -> Message {
    let result = if msg.kind == "Hello" {
        hello(session, &msg.args)
    } else if !session.greeted {
        Err(Fault::new("HelloRequired", "send Hello first"))
    } else {
        request(services, session, &msg.kind, &Args(&msg.args))
    };
    match result {
        Ok(args) => Message {
            kind: format!("{}Ok", msg.kind),
            request_id: msg.request_id,
            args,
        },
        Err(f) => error_message(msg.request_id, f.code, &f.message),
    }
}

fn hello(session: &mut Session, args: &ValueMap) -> Result<ValueMap, Fault> {
    match Args(args).int("version")? {
        PROTOCOL_VERSION => {
            session.greeted = true;
            Ok(reply([("version", Value::Int(PROTOCOL_VERSION))]))
        }
        v => Err(Fault::new(
            "ProtocolVersionMismatch",
            format!("broker speaks version {PROTOCOL_VERSION}, client sent {v}"),
        )),
    }
}

fn proxy(services: &Services, session: &Session, a: &Args) -> Result<ProxyId, Fault> {
    let id = a.id("proxy_id")?;
    if !services.claim(id, session.id) {
        return Err(ChannelError::NoSuchProxy(id).into());
    }
    Ok(id)
}

fn consumer(services: &Services, session: &Session, a: &Args) -> Result<ProxyId, Fault> {
    let id = proxy(services, session, a)?;
    match services.channels.proxy_role(id) {
        Some(ProxyRole::Consumer) => Ok(id),
        _ => Err(ChannelError::NoSuchProxy(id).into()),
    }
}

fn request(services: &Arc<Services>, session: &mut Session, kind: &str, a: &Args) -> Result<ValueMap, Fault> {
    let ch = &services.channels;
    Ok(match kind {
        "CreateChannel" => {
            let qos = QosProfile::DEFAULT_CHANNEL.overlaid(&a.qos()?);
            reply([("channel_id", Value::Int(ch.create_channel(qos)? as i64))])
        }
        "ConnectSupplier" => {
            let id = ch.connect_supplier(a.id("channel_id")?, a.qos()?)?;
            services.adopt(id, session.id);
            reply([("proxy_id", Value::Int(id as i64))])
        }
        "ConnectConsumer" => {
            let id = ch.connect_consumer(a.id("channel_id")?, a.subscription()?, a.filter("filter")?, a.qos()?)?;
            services.adopt(id, session.id);
            reply([("proxy_id", Value::Int(id as i64))])
        }
        "SetFilter" => {
            ch.set_filter(consumer(services, session, a)?, a.filter("filter")?)?;
            ValueMap::new()
        }
        "Push" => {
            let id = proxy(services, session, a)?;
            let event = StructuredEvent::from_value(a.get("event")?.clone())
                .map_err(|e| Fault::new("InvalidEvent", e.to_string()))?;
            match ch.push(id, event)? {
                PushOutcome::Accepted => reply([("status", "Accepted".into())]),
                PushOutcome::Rejected(r) => reply([("status", "Rejected".into()), ("reason", r.as_str().into())]),
            }
        }
        "Receive" => {
            let id = consumer(services, session, a)?;
            let max = a.opt("max").map_or(Ok(i64::MAX), |_| a.int("max"))?.max(0) as usize;
            let events = ch.receive(id, max)?.iter().map(|e| e.to_value()).collect();
            reply([("events", Value::List(events))])
        }
        "Subscribe" => {
            let id = consumer(services, session, a)?;
            services.start_pump(id, session.tx.clone());
            ValueMap::new()
        }
        "Ack" => {
            let id = consumer(services, session, a)?;
            let n = ch.ack(id, a.id("delivery_id")?)?;
            reply([("acked", Value::Int(n as i64))])
        }
        "Disconnect" => {
            let id = proxy(services, session, a)?;
            services.release(id);
            ch.disconnect(id)?;
            ValueMap::new()
        }
        "Stats" => {
            let s = ch.consumer_stats(consumer(services, session, a)?)?;
            reply([
                ("enqueued", Value::Int(s.enqueued as i64)),
                ("delivered", Value::Int(s.delivered as i64)),
                ("discarded", Value::Int(s.discarded as i64)),
                ("queued", Value::Int(s.queued as i64)),
            ])
        }
        "Bind" => {
            services.naming.bind(&a.name()?, a.service_ref()?)?;
            ValueMap::new()
        }
        "Rebind" => {
            services.naming.rebind(&a.name()?, a.service_ref()?)?;
            ValueMap::new()
        }
        "BindNewContext" => {
            services.naming.bind_new_context(&a.name()?)?;
            ValueMap::new()
        }
        "Resolve" => reply([("ref", services.naming.resolve(&a.name()?)?.to_value())]),
        "Unbind" => {
            services.naming.unbind(&a.name()?)?;
            ValueMap::new()
        }
        "List" => {
            let name = match a.opt("name") {
                None => None,
                Some(Value::Str(s)) if s.is_empty() => None,
                Some(_) => Some(a.name()?),
            };
            let bindings = services
                .naming
                .list(name.as_ref())?
                .into_iter()
                .map(|(n, k)| Value::Map(reply([("name", n.into()), ("kind", k.as_str().into())])))
                .collect();
            reply([("bindings", Value::List(bindings))])
        }
        "DefineProperty" => {
            services
                .properties
                .define_property(a.str("set_id")?, a.str("name")?, a.0.get("value").cloned().unwrap_or(Value::Null))?;
            ValueMap::new()
        }
        "GetProperty" => reply([("value", services.properties.get_property(a.str("set_id")?, a.str("name")?)?)]),
        "GetAll" => reply([("entries", Value::Map(services.properties.get_all(a.str("set_id")?)?))]),
        "DeleteProperty" => {
            services.properties.delete_property(a.str("set_id")?, a.str("name")?)?;
            ValueMap::new()
        }
        "CreateLog" => {
            services.logs.create_log(log_config(a)?)?;
            ValueMap::new()
        }
        "Query" => {
            let c = a.filter("constraint")?.unwrap_or(Constraint::Bool(true));
            let from = a.opt("from_id").map_or(Ok(1), |_| a.id("from_id"))?;
            let max = a.opt("max").map_or(Ok(DEFAULT_QUERY_MAX), |_| a.int("max"))?.max(0) as usize;
            let page = services.logs.query(a.str("log_id")?, &c, from, max)?;
            reply([
                ("records", Value::List(page.records.iter().map(|r| r.to_value()).collect())),
                ("next_id", page.next_id.map_or(Value::Null, |n| Value::Int(n as i64))),
            ])
        }
        other => return Err(Fault::new("UnknownKind", format!("unknown request kind `{other}`"))),
    })
}

fn log_config(a: &Args) -> Result<LogConfig, Fault> {
    let max = a.int("max_records")?;
    if max < 1 {
        return Err(Fault::new("InvalidConfig", "max_records must be at least 1"));
    }
    let mut cfg = LogConfig::new(a.str("log_id")?, a.id("source_channel")?, max as u64);
    cfg.capture_filter = a.filter("capture_filter")?;
    if a.opt("full_action").is_some() {
        cfg.full_action = a
            .str("full_action")?
            .parse::<FullAction>()
            .map_err(|e| Fault::new("InvalidConfig", e))?;
    }
    if let Some(list) = a.opt("threshold_fractions") {
        let bad = || Fault::new("InvalidConfig", "threshold_fractions must be a list of numbers");
        cfg.threshold_fractions = list
            .as_list()
            .ok_or_else(bad)?
            .iter()
            .map(|v| match v {
                Value::Float(f) => Ok(*f),
                Value::Int(i) => Ok(*i as f64),
                _ => Err(bad()),
            })
            .collect::<Result<_, _>>()?;
    }
    if a.opt("alarm_channel").is_some() {
        cfg.alarm_channel = Some(a.id("alarm_channel")?);
    }
    Ok(cfg)
}
