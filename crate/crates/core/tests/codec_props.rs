use notibus_core::codec::{decode_value, encode_value};
use notibus_core::event::{decode_event, encode_event, StructuredEvent};
use notibus_core::value::Value;
use proptest::prelude::*;

fn scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        any::<f64>().prop_map(Value::Float),
        any::<String>().prop_map(Value::Str),
    ]
}

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![scalar(), proptest::collection::vec(any::<u8>(), 0..16).prop_map(Value::Bytes)].prop_recursive(
        4,
        48,
        5,
        |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..5).prop_map(Value::List),
                proptest::collection::btree_map(any::<String>(), inner, 0..5).prop_map(Value::Map),
            ]
        },
    )
}

fn event() -> impl Strategy<Value = StructuredEvent> {
    let finite = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        (-1e12f64..1e12).prop_map(Value::Float),
        ".{0,8}".prop_map(Value::Str),
    ];
    (
        "[A-Za-z]{1,8}",
        "[A-Za-z]{1,8}",
        ".{0,8}",
        proptest::collection::btree_map("[a-z]{1,6}", finite, 0..6),
        value(),
    )
        .prop_map(|(d, t, n, body, payload)| {
            let mut e = StructuredEvent::new(d, t).named(n).with_payload(payload);
            e.filterable_body = body;
            e
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn values_round_trip(v in value()) {
        let text = encode_value(&v);
        prop_assert_eq!(decode_value(text.as_bytes()).unwrap(), v.clone());
        // Canonical: re-encoding the decoded value gives identical text.
        prop_assert_eq!(encode_value(&decode_value(text.as_bytes()).unwrap()), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn events_round_trip(e in event()) {
        let bytes = encode_event(&e).unwrap();
        prop_assert_eq!(decode_event(&bytes).unwrap(), e);
    }

    #[test]
    fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_value(&bytes);
    }
}
