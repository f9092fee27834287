use std::cmp::Ordering;

use super::{Constraint, FieldRef, Operand, RelOp};
use crate::event::StructuredEvent;
use crate::value::Value;

#[derive(Clone, Copy)]
enum Scalar<'a> {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(&'a str),
}

fn scalar(v: &Value) -> Option<Scalar<'_>> {
    Some(match v {
        Value::Null => Scalar::Null,
        Value::Bool(b) => Scalar::Bool(*b),
        Value::Int(i) => Scalar::Int(*i),
        Value::Float(f) => Scalar::Float(*f),
        Value::Str(s) => Scalar::Str(s),
        _ => return None,
    })
}

fn field<'a>(f: &'a FieldRef, e: &'a StructuredEvent) -> Option<Scalar<'a>> {
    match f {
        FieldRef::DomainName => Some(Scalar::Str(&e.header.domain_name)),
        FieldRef::TypeName => Some(Scalar::Str(&e.header.type_name)),
        FieldRef::EventName => Some(Scalar::Str(&e.header.event_name)),
        FieldRef::Body(name) => e.filterable_body.get(name).and_then(scalar),
    }
}

fn operand<'a>(o: &'a Operand, e: &'a StructuredEvent) -> Option<Scalar<'a>> {
    match o {
        Operand::Field(f) => field(f, e),
        Operand::Literal(v) => scalar(v),
    }
}

fn ordered(ord: Ordering, op: RelOp) -> bool {
    match op {
        RelOp::Eq => ord == Ordering::Equal,
        RelOp::Ne => ord != Ordering::Equal,
        RelOp::Lt => ord == Ordering::Less,
        RelOp::Le => ord != Ordering::Greater,
        RelOp::Gt => ord == Ordering::Greater,
        RelOp::Ge => ord != Ordering::Less,
        RelOp::Contains => false,
    }
}

// Incompatible operand types make every operator false, `!=` included.
fn compare(l: Scalar<'_>, op: RelOp, r: Scalar<'_>) -> bool {
    use Scalar::*;
    match (l, r) {
        (Int(a), Int(b)) => ordered(a.cmp(&b), op),
        (Int(a), Float(b)) => float_cmp(a as f64, op, b),
        (Float(a), Int(b)) => float_cmp(a, op, b as f64),
        (Float(a), Float(b)) => float_cmp(a, op, b),
        (Str(a), Str(b)) if op == RelOp::Contains => a.contains(b),
        (Str(a), Str(b)) => ordered(a.as_bytes().cmp(b.as_bytes()), op),
        (Bool(a), Bool(b)) => match op {
            RelOp::Eq => a == b,
            RelOp::Ne => a != b,
            _ => false,
        },
        (Null, Null) => op == RelOp::Eq,
        _ => false,
    }
}

fn float_cmp(a: f64, op: RelOp, b: f64) -> bool {
    a.partial_cmp(&b).is_some_and(|ord| ordered(ord, op))
}

/// Total evaluation: missing fields and type mismatches make a comparison
/// false rather than failing.
pub fn eval_constraint(c: &Constraint, e: &StructuredEvent) -> bool {
    match c {
        Constraint::Bool(b) => *b,
        Constraint::Not(a) => !eval_constraint(a, e),
        Constraint::And(a, b) => eval_constraint(a, e) && eval_constraint(b, e),
        Constraint::Or(a, b) => eval_constraint(a, e) || eval_constraint(b, e),
        Constraint::Exists(f) => match f {
            FieldRef::Body(name) => e.filterable_body.contains_key(name),
            _ => true,
        },
        Constraint::Compare(l, op, r) => match (operand(l, e), operand(r, e)) {
            (Some(a), Some(b)) => compare(a, *op, b),
            _ => false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::parse_constraint;

    fn ev() -> StructuredEvent {
        StructuredEvent::new("PS", "current")
            .named("readback")
            .with_field("value", 4)
            .with_field("x", 2.5)
            .with_field("s", "power supply")
            .with_field("on", true)
            .with_field("nothing", Value::Null)
    }

    fn check(text: &str, expected: bool) {
        let c = parse_constraint(text).unwrap();
        assert_eq!(eval_constraint(&c, &ev()), expected, "{text}");
    }

    #[test]
    fn numeric_mixing() {
        check("$.value > 3.5", true);
        check("$.value == 4.0", true);
        check("$.x < $.value", true);
        check("$.value >= 4", true);
        check("$.value != 4", false);
    }

    #[test]
    fn missing_fields() {
        check("$.missing == 1", false);
        check("exist $.missing", false);
        check("not ($.missing == 1)", true);
        check("$.missing != 1", false);
        check("exist $.nothing", true);
    }

    #[test]
    fn mismatches_are_false() {
        check("$.s == 1", false);
        check("$.s != 1", false);
        check("$.value ~ '4'", false);
        check("$.on < true", false);
        check("$.nothing == $.nothing", true);
        check("$.nothing != $.nothing", false);
    }

    #[test]
    fn strings_and_headers() {
        check("$.s ~ 'supply'", true);
        check("$domain_name == 'PS' and $type_name ~ 'cur'", true);
        check("$event_name < 'readbacks'", true);
        check("exist $event_name", true);
        check("$.on == true or $.on == false", true);
    }

    #[test]
    fn int_comparison_is_exact() {
        let e = StructuredEvent::new("d", "t").with_field("big", i64::MAX);
        let c = parse_constraint("$.big > 9223372036854775806").unwrap();
        assert!(eval_constraint(&c, &e));
    }
}
