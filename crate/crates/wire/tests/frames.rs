use notibus_core::value::{Value, ValueMap};
use notibus_wire::frame::{decode_frame, encode_frame, read_message, FrameError, Message, MAX_FRAME};
use proptest::prelude::*;

fn scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        any::<f64>().prop_map(Value::Float),
        ".{0,12}".prop_map(Value::Str),
        proptest::collection::vec(any::<u8>(), 0..8).prop_map(Value::Bytes),
    ]
}

fn value() -> impl Strategy<Value = Value> {
    scalar().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
            proptest::collection::btree_map(".{0,6}", inner, 0..4).prop_map(Value::Map),
        ]
    })
}

fn message() -> impl Strategy<Value = Message> {
    (
        "[A-Za-z]{1,16}",
        0..=i64::MAX as u64,
        proptest::collection::btree_map("[a-z_]{1,10}", value(), 0..5),
    )
        .prop_map(|(kind, request_id, args): (String, u64, ValueMap)| Message {
            kind,
            request_id,
            args,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn frames_round_trip(m in message()) {
        let bytes = encode_frame(&m).unwrap();
        prop_assert_eq!(decode_frame(&bytes).unwrap(), Some((m.clone(), bytes.len())));
        for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
            prop_assert_eq!(decode_frame(&bytes[..cut]).unwrap(), None);
        }
    }
}

#[test]
fn body_of_max_plus_one_is_too_large() {
    // The largest body we can build is exactly MAX_FRAME; one more byte fails.
    let fixed = encode_frame(&Message::new("X", 1).arg("s", "")).unwrap().len() - 4;
    let fits = Message::new("X", 1).arg("s", "a".repeat(MAX_FRAME - fixed));
    assert_eq!(encode_frame(&fits).unwrap().len(), MAX_FRAME + 4);
    let over = Message::new("X", 1).arg("s", "a".repeat(MAX_FRAME - fixed + 1));
    assert_eq!(encode_frame(&over), Err(FrameError::FrameTooLarge(MAX_FRAME + 1)));
    let header = ((MAX_FRAME + 1) as u32).to_be_bytes();
    assert_eq!(decode_frame(&header), Err(FrameError::FrameTooLarge(MAX_FRAME + 1)));
}

#[tokio::test]
async fn short_body_then_close_is_truncated() {
    let mut bytes = 100u32.to_be_bytes().to_vec();
    bytes.extend_from_slice(b"{\"args\":{}");
    assert_eq!(decode_frame(&bytes).unwrap(), None);
    assert_eq!(read_message(&mut &bytes[..]).await, Err(FrameError::Truncated));
}
