//! Random constraints and events over a small shared vocabulary, so that
//! generated filters often refer to fields the events actually carry.

use notibus_core::event::StructuredEvent;
use notibus_core::filter::{Constraint, FieldRef, Operand, RelOp};
use notibus_core::value::Value;
use rand::seq::SliceRandom;
use rand::Rng;

pub const DOMAINS: &[&str] = &["PS", "RF", "vac"];
pub const TYPES: &[&str] = &["current", "alarm", "state"];
pub const FIELDS: &[&str] = &["value", "limit", "name", "on", "x", "none"];
const WORDS: &[&str] = &["", "a", "ab", "PS", "it's", "back\\slash", "power supply", "über"];

pub fn literal<R: Rng>(rng: &mut R) -> Value {
    match rng.gen_range(0..5) {
        0 => Value::Bool(rng.gen()),
        1 => Value::Int(*[-3i64, 0, 1, 2, 4, 100, i64::MIN, i64::MAX].choose(rng).unwrap()),
        2 => Value::Float(*[-0.0, 0.0, 0.5, 2.0, 3.5, -1e300, 1e-9, 4.0].choose(rng).unwrap()),
        _ => Value::Str(WORDS.choose(rng).unwrap().to_string()),
    }
}

fn field_ref<R: Rng>(rng: &mut R) -> FieldRef {
    match rng.gen_range(0..6) {
        0 => FieldRef::DomainName,
        1 => FieldRef::TypeName,
        2 => FieldRef::EventName,
        _ => FieldRef::Body(FIELDS.choose(rng).unwrap().to_string()),
    }
}

fn operand<R: Rng>(rng: &mut R) -> Operand {
    if rng.gen_bool(0.55) {
        Operand::Field(field_ref(rng))
    } else {
        Operand::Literal(literal(rng))
    }
}

fn relop<R: Rng>(rng: &mut R) -> RelOp {
    *[RelOp::Eq, RelOp::Ne, RelOp::Lt, RelOp::Le, RelOp::Gt, RelOp::Ge, RelOp::Contains]
        .choose(rng)
        .unwrap()
}

/// A constraint whose nesting depth is at most `depth` (a leaf has depth 1).
pub fn constraint<R: Rng>(rng: &mut R, depth: usize) -> Constraint {
    let leaf = depth <= 1 || rng.gen_bool(0.25);
    if leaf {
        return match rng.gen_range(0..8) {
            0 => Constraint::Bool(rng.gen()),
            1 => Constraint::Exists(field_ref(rng)),
            _ => Constraint::Compare(operand(rng), relop(rng), operand(rng)),
        };
    }
    let sub = |rng: &mut R| Box::new(constraint(rng, depth - 1));
    match rng.gen_range(0..3) {
        0 => Constraint::Not(sub(rng)),
        1 => Constraint::And(sub(rng), sub(rng)),
        _ => Constraint::Or(sub(rng), sub(rng)),
    }
}

/// A valid event with a random subset of the shared fields.
pub fn event<R: Rng>(rng: &mut R) -> StructuredEvent {
    let mut e = StructuredEvent::new(*DOMAINS.choose(rng).unwrap(), *TYPES.choose(rng).unwrap())
        .named(*WORDS.choose(rng).unwrap());
    for f in FIELDS {
        if rng.gen_bool(0.6) {
            let v = if rng.gen_bool(0.1) { Value::Null } else { literal(rng) };
            e = e.with_field(*f, v);
        }
    }
    e
}
