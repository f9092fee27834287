//! A deliberately plain tree-walking evaluator for constraints.
//!
//! Rules:
//! * `$domain_name`, `$type_name`, `$event_name` read the fixed header;
//!   `$.x` reads `x` from the filterable body and is missing otherwise.
//! * A comparison with a missing side is false.
//! * int/int compares exactly; any other numeric pair compares as f64.
//! * str/str orders by bytes; `~` asks whether the left contains the right.
//! * bool/bool supports only `==` and `!=`; null equals null.
//! * Every other pairing is false, whatever the operator.
//! * `exist $.x` is true when the body has key `x`; header fields always exist.

use notibus_core::event::StructuredEvent;
use notibus_core::filter::{Constraint, FieldRef, Operand, RelOp};
use notibus_core::value::Value;

fn lookup(o: &Operand, e: &StructuredEvent) -> Option<Value> {
    match o {
        Operand::Literal(v) => Some(v.clone()),
        Operand::Field(FieldRef::DomainName) => Some(Value::Str(e.header.domain_name.clone())),
        Operand::Field(FieldRef::TypeName) => Some(Value::Str(e.header.type_name.clone())),
        Operand::Field(FieldRef::EventName) => Some(Value::Str(e.header.event_name.clone())),
        Operand::Field(FieldRef::Body(k)) => e.filterable_body.get(k).cloned(),
    }
}

fn ints(a: i64, op: RelOp, b: i64) -> bool {
    match op {
        RelOp::Eq => a == b,
        RelOp::Ne => a != b,
        RelOp::Lt => a < b,
        RelOp::Le => a <= b,
        RelOp::Gt => a > b,
        RelOp::Ge => a >= b,
        RelOp::Contains => false,
    }
}

fn floats(a: f64, op: RelOp, b: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return false;
    }
    match op {
        RelOp::Eq => a == b,
        RelOp::Ne => a != b,
        RelOp::Lt => a < b,
        RelOp::Le => a <= b,
        RelOp::Gt => a > b,
        RelOp::Ge => a >= b,
        RelOp::Contains => false,
    }
}

fn strings(a: &str, op: RelOp, b: &str) -> bool {
    let (x, y) = (a.as_bytes(), b.as_bytes());
    match op {
        RelOp::Eq => x == y,
        RelOp::Ne => x != y,
        RelOp::Lt => x < y,
        RelOp::Le => x <= y,
        RelOp::Gt => x > y,
        RelOp::Ge => x >= y,
        RelOp::Contains => a.contains(b),
    }
}

fn compare(l: &Value, op: RelOp, r: &Value) -> bool {
    match (l, r) {
        (Value::Int(a), Value::Int(b)) => ints(*a, op, *b),
        (Value::Int(a), Value::Float(b)) => floats(*a as f64, op, *b),
        (Value::Float(a), Value::Int(b)) => floats(*a, op, *b as f64),
        (Value::Float(a), Value::Float(b)) => floats(*a, op, *b),
        (Value::Str(a), Value::Str(b)) => strings(a, op, b),
        (Value::Bool(a), Value::Bool(b)) => match op {
            RelOp::Eq => a == b,
            RelOp::Ne => a != b,
            _ => false,
        },
        (Value::Null, Value::Null) => matches!(op, RelOp::Eq),
        _ => false,
    }
}

pub fn reference_eval(c: &Constraint, e: &StructuredEvent) -> bool {
    match c {
        Constraint::Bool(b) => *b,
        Constraint::Not(x) => !reference_eval(x, e),
        Constraint::And(x, y) => {
            let a = reference_eval(x, e);
            let b = reference_eval(y, e);
            a && b
        }
        Constraint::Or(x, y) => {
            let a = reference_eval(x, e);
            let b = reference_eval(y, e);
            a || b
        }
        Constraint::Exists(FieldRef::Body(k)) => e.filterable_body.contains_key(k),
        Constraint::Exists(_) => true,
        Constraint::Compare(l, op, r) => match (lookup(l, e), lookup(r, e)) {
            (Some(a), Some(b)) => compare(&a, *op, &b),
            _ => false,
        },
    }
}
