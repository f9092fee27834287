use notibus_core::filter::{eval_constraint, parse_constraint, print_constraint, Constraint};
use notibus_testkit::gen;
use notibus_testkit::reference_filter::reference_eval;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn eval_matches_reference(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let c = gen::constraint(&mut rng, 6);
        let e = gen::event(&mut rng);
        prop_assert_eq!(eval_constraint(&c, &e), reference_eval(&c, &e), "{}", print_constraint(&c));
    }

    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let c = gen::constraint(&mut rng, 6);
        let text = print_constraint(&c);
        prop_assert_eq!(parse_constraint(&text), Ok(c), "{}", text);
    }

    #[test]
    fn de_morgan(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let a = gen::constraint(&mut rng, 4);
        let b = gen::constraint(&mut rng, 4);
        let e = gen::event(&mut rng);
        let lhs = Constraint::not(Constraint::and(a.clone(), b.clone()));
        let rhs = Constraint::or(Constraint::not(a), Constraint::not(b));
        prop_assert_eq!(eval_constraint(&lhs, &e), eval_constraint(&rhs, &e));
    }

    #[test]
    fn evaluation_is_repeatable(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let c = gen::constraint(&mut rng, 6);
        let e = gen::event(&mut rng);
        let first = eval_constraint(&c, &e);
        prop_assert_eq!(eval_constraint(&c, &e.clone()), first);
    }
}

#[test]
fn generated_depth_is_bounded() {
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..2000 {
        assert!(gen::constraint(&mut rng, 6).depth() <= 6);
    }
}

#[test]
fn reference_agrees_on_hand_cases() {
    let e = notibus_core::event::StructuredEvent::new("PS", "current").with_field("value", 4i64);
    for (text, want) in [
        ("$.value > 3.5", true),
        ("$.missing == 1", false),
        ("exist $.missing", false),
        ("not ($.missing == 1)", true),
        ("$.value != 'x'", false),
        ("$domain_name ~ 'P'", true),
        ("", true),
    ] {
        let c = parse_constraint(text).unwrap();
        assert_eq!(reference_eval(&c, &e), want, "{text}");
        assert_eq!(eval_constraint(&c, &e), want, "{text}");
    }
}
