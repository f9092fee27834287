//! Constraint language for consumer filters and log queries, plus coarse
//! (domain, type) subscriptions.
//!
//! ```text
//! constraint := or
//! or         := and { "or" and }
//! and        := not { "and" not }
//! not        := "not" not | prim
//! prim       := compare | "(" or ")" | "exist" field | "true" | "false"
//! compare    := operand relop operand
//! relop      := "==" | "!=" | "<" | "<=" | ">" | ">=" | "~"
//! operand    := field | literal
//! field      := "$domain_name" | "$type_name" | "$event_name" | "$." ident
//! literal    := int | float | "'" chars "'" | "true" | "false"
//! ```
//!
//! Inside quotes `\'` and `\\` escape the quote and the backslash. `true` or
//! `false` followed by a relational operator is a literal operand, otherwise
//! it is a constant constraint.

mod eval;
mod parse;

use std::fmt;

pub use eval::eval_constraint;
pub use parse::{parse_constraint, ParseError};

use crate::codec::write_float;
use crate::event::FixedHeader;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FieldRef {
    DomainName,
    TypeName,
    EventName,
    /// `$.ident`, looked up in the filterable body.
    Body(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Field(FieldRef),
    /// Bool, Int, finite Float or Str.
    Literal(Value),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    /// Left string contains right string.
    Contains,
}

impl RelOp {
    pub const ALL: [RelOp; 7] = [
        RelOp::Eq,
        RelOp::Ne,
        RelOp::Lt,
        RelOp::Le,
        RelOp::Gt,
        RelOp::Ge,
        RelOp::Contains,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Eq => "==",
            RelOp::Ne => "!=",
            RelOp::Lt => "<",
            RelOp::Le => "<=",
            RelOp::Gt => ">",
            RelOp::Ge => ">=",
            RelOp::Contains => "~",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    Or(Box<Constraint>, Box<Constraint>),
    And(Box<Constraint>, Box<Constraint>),
    Not(Box<Constraint>),
    Compare(Operand, RelOp, Operand),
    Exists(FieldRef),
    Bool(bool),
}

impl Constraint {
    pub fn or(a: Constraint, b: Constraint) -> Self {
        Constraint::Or(Box::new(a), Box::new(b))
    }

    pub fn and(a: Constraint, b: Constraint) -> Self {
        Constraint::And(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Constraint) -> Self {
        Constraint::Not(Box::new(a))
    }

    pub fn compare(l: Operand, op: RelOp, r: Operand) -> Self {
        Constraint::Compare(l, op, r)
    }

    pub fn depth(&self) -> usize {
        match self {
            Constraint::Or(a, b) | Constraint::And(a, b) => 1 + a.depth().max(b.depth()),
            Constraint::Not(a) => 1 + a.depth(),
            _ => 1,
        }
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldRef::DomainName => f.write_str("$domain_name"),
            FieldRef::TypeName => f.write_str("$type_name"),
            FieldRef::EventName => f.write_str("$event_name"),
            FieldRef::Body(name) => write!(f, "$.{name}"),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Field(r) => r.fmt(f),
            Operand::Literal(v) => f.write_str(&literal_text(v)),
        }
    }
}

fn literal_text(v: &Value) -> String {
    match v {
        Value::Bool(b) => b.to_string(),
        Value::Int(i) => i.to_string(),
        Value::Float(x) => {
            let mut s = String::new();
            write_float(&mut s, *x);
            s
        }
        Value::Str(s) => {
            let mut out = String::with_capacity(s.len() + 2);
            out.push('\'');
            for c in s.chars() {
                if c == '\'' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('\'');
            out
        }
        // Not expressible; only reachable through hand-built ASTs.
        other => other.to_string(),
    }
}

/// Fully parenthesized; re-parses to the same tree.
impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Bool(b) => write!(f, "{b}"),
            Constraint::Compare(l, op, r) => write!(f, "({l} {} {r})", op.symbol()),
            Constraint::Exists(r) => write!(f, "(exist {r})"),
            Constraint::Not(c) => write!(f, "(not {c})"),
            Constraint::And(a, b) => write!(f, "({a} and {b})"),
            Constraint::Or(a, b) => write!(f, "({a} or {b})"),
        }
    }
}

pub fn print_constraint(c: &Constraint) -> String {
    c.to_string()
}

/// Coarse type-level filter. Empty means everything; `*` matches any value
/// in either position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subscription {
    pub patterns: Vec<(String, String)>,
}

impl Subscription {
    pub fn all() -> Self {
        Subscription::default()
    }

    pub fn new<D: Into<String>, T: Into<String>>(patterns: impl IntoIterator<Item = (D, T)>) -> Self {
        Subscription {
            patterns: patterns
                .into_iter()
                .map(|(d, t)| (d.into(), t.into()))
                .collect(),
        }
    }

    pub fn matches(&self, h: &FixedHeader) -> bool {
        match_subscription(self, h)
    }
}

pub fn match_subscription(s: &Subscription, h: &FixedHeader) -> bool {
    fn part(pattern: &str, value: &str) -> bool {
        pattern == "*" || pattern == value
    }
    s.patterns.is_empty()
        || s
            .patterns
            .iter()
            .any(|(d, t)| part(d, &h.domain_name) && part(t, &h.type_name))
}
