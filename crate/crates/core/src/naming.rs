//! Hierarchical name directory mapping paths to service references.
//!
//! Each context holds at most one binding per component. An object may be
//! bound under several names, but a name always resolves to one reference.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use parking_lot::RwLock;
use thiserror::Error;

use crate::value::{Value, ValueMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RefKind {
    ChannelFactory,
    Channel,
    Log,
    PropertySet,
    NamingContext,
}

impl RefKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RefKind::ChannelFactory => "ChannelFactory",
            RefKind::Channel => "Channel",
            RefKind::Log => "Log",
            RefKind::PropertySet => "PropertySet",
            RefKind::NamingContext => "NamingContext",
        }
    }
}

impl FromStr for RefKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "ChannelFactory" => RefKind::ChannelFactory,
            "Channel" => RefKind::Channel,
            "Log" => RefKind::Log,
            "PropertySet" => RefKind::PropertySet,
            "NamingContext" => RefKind::NamingContext,
            _ => return Err(format!("unknown reference kind `{s}`")),
        })
    }
}

/// Opaque locator of a broker-hosted object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServiceRef {
    pub kind: RefKind,
    pub id: String,
}

impl ServiceRef {
    pub fn new(kind: RefKind, id: impl Into<String>) -> Self {
        ServiceRef { kind, id: id.into() }
    }

    pub fn to_value(&self) -> Value {
        let mut m = ValueMap::new();
        m.insert("kind".into(), self.kind.as_str().into());
        m.insert("id".into(), self.id.clone().into());
        Value::Map(m)
    }

    pub fn from_value(v: &Value) -> Result<Self, String> {
        let m = v.as_map().ok_or("reference must be a map")?;
        let kind = m
            .get("kind")
            .and_then(Value::as_str)
            .ok_or("reference needs a string `kind`")?
            .parse()?;
        let id = m
            .get("id")
            .and_then(Value::as_str)
            .ok_or("reference needs a string `id`")?;
        Ok(ServiceRef::new(kind, id))
    }
}

impl fmt::Display for ServiceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.id)
    }
}

/// Non-empty path of non-empty components, written `a/b/c`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Name(Vec<String>);

impl Name {
    pub fn new<S: Into<String>>(components: impl IntoIterator<Item = S>) -> Result<Self, NamingError> {
        let components: Vec<String> = components.into_iter().map(Into::into).collect();
        if components.is_empty() || components.iter().any(|c| c.is_empty() || c.contains('/')) {
            return Err(NamingError::InvalidName(components.join("/")));
        }
        Ok(Name(components))
    }

    pub fn parse(text: &str) -> Result<Self, NamingError> {
        Name::new(text.split('/'))
    }

    pub fn components(&self) -> &[String] {
        &self.0
    }

    pub fn parent(&self) -> &[String] {
        &self.0[..self.0.len() - 1]
    }

    pub fn leaf(&self) -> &str {
        &self.0[self.0.len() - 1]
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

impl FromStr for Name {
    type Err = NamingError;

    fn from_str(s: &str) -> Result<Self, NamingError> {
        Name::parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BindingKind {
    Object,
    Context,
}

impl BindingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BindingKind::Object => "Object",
            BindingKind::Context => "Context",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NamingError {
    #[error("name `{0}` is already bound")]
    AlreadyBound(String),
    #[error("missing context for `{0}`")]
    MissingContext(String),
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("`{0}` is a context and cannot be rebound")]
    CannotRebindContext(String),
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("context `{0}` is not empty")]
    ContextNotEmpty(String),
    #[error("`{0}` is not a context")]
    NotAContext(String),
}

impl NamingError {
    pub fn code(&self) -> &'static str {
        match self {
            NamingError::AlreadyBound(_) => "AlreadyBound",
            NamingError::MissingContext(_) => "MissingContext",
            NamingError::InvalidName(_) => "InvalidName",
            NamingError::CannotRebindContext(_) => "CannotRebindContext",
            NamingError::NotFound(_) => "NotFound",
            NamingError::ContextNotEmpty(_) => "ContextNotEmpty",
            NamingError::NotAContext(_) => "NotAContext",
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Object(ServiceRef),
    Context(Context),
}

#[derive(Debug, Clone, Default)]
struct Context {
    bindings: BTreeMap<String, Node>,
}

impl Context {
    fn descend(&self, path: &[String]) -> Option<&Context> {
        path.iter().try_fold(self, |ctx, c| match ctx.bindings.get(c) {
            Some(Node::Context(child)) => Some(child),
            _ => None,
        })
    }

    fn descend_mut(&mut self, path: &[String]) -> Option<&mut Context> {
        path.iter().try_fold(self, |ctx, c| match ctx.bindings.get_mut(c) {
            Some(Node::Context(child)) => Some(child),
            _ => None,
        })
    }
}

#[derive(Debug, Default)]
pub struct NamingService {
    root: RwLock<Context>,
}

impl NamingService {
    pub fn new() -> Self {
        NamingService::default()
    }

    fn parent_mut<'a>(root: &'a mut Context, n: &Name) -> Result<&'a mut Context, NamingError> {
        root.descend_mut(n.parent())
            .ok_or_else(|| NamingError::MissingContext(n.to_string()))
    }

    /// Binds a new leaf; an existing binding is left untouched.
    pub fn bind(&self, n: &Name, target: ServiceRef) -> Result<(), NamingError> {
        let mut root = self.root.write();
        let parent = Self::parent_mut(&mut root, n)?;
        if parent.bindings.contains_key(n.leaf()) {
            return Err(NamingError::AlreadyBound(n.to_string()));
        }
        parent.bindings.insert(n.leaf().to_owned(), Node::Object(target));
        Ok(())
    }

    pub fn rebind(&self, n: &Name, target: ServiceRef) -> Result<(), NamingError> {
        let mut root = self.root.write();
        let parent = Self::parent_mut(&mut root, n)?;
        if let Some(Node::Context(_)) = parent.bindings.get(n.leaf()) {
            return Err(NamingError::CannotRebindContext(n.to_string()));
        }
        parent.bindings.insert(n.leaf().to_owned(), Node::Object(target));
        Ok(())
    }

    pub fn bind_new_context(&self, n: &Name) -> Result<(), NamingError> {
        let mut root = self.root.write();
        let parent = Self::parent_mut(&mut root, n)?;
        if parent.bindings.contains_key(n.leaf()) {
            return Err(NamingError::AlreadyBound(n.to_string()));
        }
        parent
            .bindings
            .insert(n.leaf().to_owned(), Node::Context(Context::default()));
        Ok(())
    }

    /// Contexts resolve to a `NamingContext` reference whose id is the path.
    pub fn resolve(&self, n: &Name) -> Result<ServiceRef, NamingError> {
        let root = self.root.read();
        let node = root
            .descend(n.parent())
            .and_then(|p| p.bindings.get(n.leaf()))
            .ok_or_else(|| NamingError::NotFound(n.to_string()))?;
        Ok(match node {
            Node::Object(r) => r.clone(),
            Node::Context(_) => ServiceRef::new(RefKind::NamingContext, n.to_string()),
        })
    }

    /// Removes a binding; contexts must be empty first.
    pub fn unbind(&self, n: &Name) -> Result<(), NamingError> {
        let mut root = self.root.write();
        let parent = root
            .descend_mut(n.parent())
            .ok_or_else(|| NamingError::NotFound(n.to_string()))?;
        match parent.bindings.get(n.leaf()) {
            None => Err(NamingError::NotFound(n.to_string())),
            Some(Node::Context(c)) if !c.bindings.is_empty() => {
                Err(NamingError::ContextNotEmpty(n.to_string()))
            }
            Some(_) => {
                parent.bindings.remove(n.leaf());
                Ok(())
            }
        }
    }

    /// Direct bindings of a context (or of the root), sorted by component.
    pub fn list(&self, n: Option<&Name>) -> Result<Vec<(String, BindingKind)>, NamingError> {
        let root = self.root.read();
        let ctx = match n {
            None => &*root,
            Some(n) => {
                let node = root
                    .descend(n.parent())
                    .and_then(|p| p.bindings.get(n.leaf()))
                    .ok_or_else(|| NamingError::NotFound(n.to_string()))?;
                match node {
                    Node::Context(c) => c,
                    Node::Object(_) => return Err(NamingError::NotAContext(n.to_string())),
                }
            }
        };
        Ok(ctx
            .bindings
            .iter()
            .map(|(k, node)| {
                let kind = match node {
                    Node::Object(_) => BindingKind::Object,
                    Node::Context(_) => BindingKind::Context,
                };
                (k.clone(), kind)
            })
            .collect())
    }

    /// Creates every missing context along `path`. Existing contexts are
    /// kept; an object in the way is an error.
    pub fn ensure_context(&self, path: &Name) -> Result<(), NamingError> {
        for i in 1..=path.components().len() {
            let prefix = Name(path.components()[..i].to_vec());
            match self.bind_new_context(&prefix) {
                Ok(()) => {}
                Err(NamingError::AlreadyBound(_)) => {
                    if self.resolve(&prefix)?.kind != RefKind::NamingContext {
                        return Err(NamingError::NotAContext(prefix.to_string()));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}
