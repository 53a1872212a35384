mod common;

use std::sync::Arc;

use proptest::prelude::*;
use sensing_core::fusion::{
    evaluate_rules, params, window_average, window_average_at, Capability, FusionError,
    FusionRepository, KindSpec, OperatorDescriptor, Param, Params, Signature, COMPARE_ID,
    IMPUTE_LINEAR_ID, LATEST_VALUE_ID, LOGICAL_AND_ID, LOGICAL_OR_ID, RULE_EVAL_ID,
    WINDOW_AVERAGE_ID,
};
use sensing_core::{Value, ValueKind};

use common::{air_stress_oracle, disease_oracle, number_bindings, text_or_unknown};

fn num(v: f64) -> Value {
    Value::Number(v)
}

fn op(symbol: &str) -> Params {
    params([("op", Param::Text(symbol.into()))])
}

#[test]
fn air_stress_examples() {
    let kb = common::phytophthora_kb();
    let rules = kb.rules_for("airStress");
    let eval = |t: f64, h: f64| {
        evaluate_rules(
            &rules,
            &number_bindings(&[("airTemperature", Some(t)), ("airHumidity", Some(h))]),
        )
    };
    assert_eq!(eval(10.0, 20.0), Value::text("low"));
    assert_eq!(eval(12.0, 25.0), Value::text("high"));
    assert_eq!(eval(15.0, 20.0), Value::Unknown);
}

#[test]
fn disease_examples() {
    let kb = common::phytophthora_kb();
    let rules = kb.rules_for("phytophtoraDiseaseStatus");
    let eval = |stress: Value, w: Option<f64>| {
        let mut b = number_bindings(&[("leafWetness", w)]);
        b.insert("airStress".into(), stress);
        evaluate_rules(&rules, &b)
    };
    assert_eq!(
        eval(Value::text("high"), Some(60.0)),
        Value::text("infected")
    );
    assert_eq!(
        eval(Value::text("high"), Some(50.0)),
        Value::text("not-infected")
    );
    assert_eq!(
        eval(Value::text("low"), Some(60.0)),
        Value::text("not-infected")
    );
    // An unknown input blocks the ELSE branch even when another condition fails.
    assert_eq!(eval(Value::Unknown, Some(40.0)), Value::Unknown);
    assert_eq!(eval(Value::text("low"), None), Value::Unknown);
}

#[test]
fn grid_matches_exhaustive_oracle() {
    let kb = common::phytophthora_kb();
    let rules = kb.rules_for("airStress");
    let mut cases = 0;
    for t in 0..=30 {
        for h in (0..=100).step_by(5) {
            let (t, h) = (f64::from(t), f64::from(h));
            let got = evaluate_rules(
                &rules,
                &number_bindings(&[("airTemperature", Some(t)), ("airHumidity", Some(h))]),
            );
            assert_eq!(
                got,
                text_or_unknown(air_stress_oracle(Some(t), Some(h))),
                "t={t} h={h}"
            );
            cases += 1;
        }
    }
    assert_eq!(cases, 651);
}

#[test]
fn builtin_operator_examples() {
    let repo = FusionRepository::with_builtins();
    assert_eq!(
        repo.apply(COMPARE_ID, &[num(10.0), num(12.0)], &op("<"))
            .unwrap(),
        Value::Boolean(true)
    );
    assert_eq!(
        repo.apply(
            LOGICAL_AND_ID,
            &[Value::Boolean(true), Value::Boolean(false)],
            &Params::new()
        )
        .unwrap(),
        Value::Boolean(false)
    );
    assert_eq!(
        repo.apply(
            LOGICAL_OR_ID,
            &[Value::Boolean(false), Value::Boolean(true)],
            &Params::new()
        )
        .unwrap(),
        Value::Boolean(true)
    );
    let impute = params([
        ("timestamps", Param::Numbers(vec![0.0, 10.0])),
        ("at", Param::Number(5.0)),
    ]);
    assert_eq!(
        repo.apply(IMPUTE_LINEAR_ID, &[num(0.0), num(10.0)], &impute)
            .unwrap(),
        num(5.0)
    );
    let outside = params([
        ("timestamps", Param::Numbers(vec![0.0, 10.0])),
        ("at", Param::Number(11.0)),
    ]);
    assert_eq!(
        repo.apply(IMPUTE_LINEAR_ID, &[num(0.0), num(10.0)], &outside)
            .unwrap(),
        Value::Unknown
    );
    let latest = params([("timestamps", Param::Numbers(vec![30.0, 10.0, 20.0]))]);
    assert_eq!(
        repo.apply(LATEST_VALUE_ID, &[num(1.0), num(2.0), num(3.0)], &latest)
            .unwrap(),
        num(1.0)
    );
}

#[test]
fn window_average_examples() {
    assert_eq!(window_average(&[(0, 2.0), (10, 4.0)], 100), num(3.0));
    assert_eq!(window_average(&[], 100), Value::Unknown);
    assert_eq!(window_average(&[(5, 7.0)], 1), num(7.0));
    assert_eq!(
        window_average_at(&[(0, 2.0), (10, 4.0)], 5, 100),
        Value::Unknown
    );
    let repo = FusionRepository::with_builtins();
    let p = params([
        ("timestamps", Param::Numbers(vec![0.0, 500.0, 900.0])),
        ("window_ms", Param::Number(500.0)),
    ]);
    assert_eq!(
        repo.apply(WINDOW_AVERAGE_ID, &[num(100.0), num(2.0), num(4.0)], &p)
            .unwrap(),
        num(3.0)
    );
}

#[test]
fn signature_checks() {
    let repo = FusionRepository::with_builtins();
    assert!(matches!(
        repo.apply(COMPARE_ID, &[num(1.0)], &op("<")),
        Err(FusionError::ArityMismatch { .. })
    ));
    assert!(matches!(
        repo.apply(COMPARE_ID, &[num(1.0), Value::text("x")], &op("<")),
        Err(FusionError::KindMismatch { index: 1, .. })
    ));
    assert!(matches!(
        repo.apply(IMPUTE_LINEAR_ID, &[num(1.0), num(2.0)], &Params::new()),
        Err(FusionError::InvalidParams { .. })
    ));
}

fn descriptor(id: &str, capability: Capability, signature: Signature) -> OperatorDescriptor {
    OperatorDescriptor {
        operator_id: id.into(),
        capability,
        signature,
        params: vec![],
        description: String::new(),
    }
}

#[test]
fn registration_and_selection() {
    let repo = FusionRepository::empty();
    let n = KindSpec::Exact(ValueKind::Number);
    let b = KindSpec::Exact(ValueKind::Boolean);
    let always = Arc::new(|_: &[Value], _: &Params| Ok(Value::Boolean(true)));
    repo.register_operator(
        descriptor("z.cmp", Capability::Compare, Signature::fixed(&[n, n], b)),
        always.clone(),
    )
    .unwrap();
    repo.register_operator(
        descriptor("a.cmp", Capability::Compare, Signature::fixed(&[n, n], b)),
        always.clone(),
    )
    .unwrap();
    let found = repo
        .find_operator(&Capability::Compare, Some(&Signature::fixed(&[n, n], b)))
        .unwrap();
    assert_eq!(found.descriptor().operator_id, "a.cmp");
    assert_eq!(
        repo.register_operator(
            descriptor("a.cmp", Capability::Compare, Signature::fixed(&[n, n], b)),
            always.clone()
        )
        .unwrap_err(),
        FusionError::DuplicateOperatorId("a.cmp".into())
    );
    assert!(matches!(
        repo.register_operator(
            descriptor("bad", Capability::Compare, Signature::fixed(&[n, n, n], b)),
            always
        ),
        Err(FusionError::SignatureMismatch { .. })
    ));
    assert_eq!(
        repo.find_operator(&Capability::from("kalman"), None)
            .unwrap_err(),
        FusionError::NoOperatorFound(Capability::Other("kalman".into()))
    );
}

#[test]
fn builtins_cover_the_catalogue() {
    let repo = FusionRepository::with_builtins();
    let caps: Vec<String> = repo
        .descriptors()
        .iter()
        .map(|d| d.capability.to_string())
        .collect();
    for c in [
        "compare",
        "logical-and",
        "logical-or",
        "rule-eval",
        "window-average",
        "latest-value",
        "impute-linear",
    ] {
        assert!(caps.iter().any(|x| x == c), "missing {c}");
    }
    assert_eq!(
        repo.find_operator(&Capability::RuleEval, None)
            .unwrap()
            .descriptor()
            .operator_id,
        RULE_EVAL_ID
    );
}

fn definite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, (-50i32..50).prop_map(f64::from)]
}

proptest! {
    #[test]
    fn compare_is_a_total_order_witness(a in definite(), b in definite()) {
        let repo = FusionRepository::with_builtins();
        let holds = |s: &str| repo.apply(COMPARE_ID, &[num(a), num(b)], &op(s)).unwrap() == Value::Boolean(true);
        let count = ["<", "=", ">"].iter().filter(|s| holds(s)).count();
        prop_assert_eq!(count, 1);
    }

    #[test]
    fn impute_hits_endpoints_and_is_monotone(
        t0 in 0u64..10_000,
        span in 1u64..10_000,
        v0 in -100.0f64..100.0,
        dv in 0.0f64..100.0,
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
    ) {
        let repo = FusionRepository::with_builtins();
        let t1 = t0 + span;
        let v1 = v0 + dv;
        let at = |t: u64| {
            let p = params([
                ("timestamps", Param::Numbers(vec![t0 as f64, t1 as f64])),
                ("at", Param::Number(t as f64)),
            ]);
            repo.apply(IMPUTE_LINEAR_ID, &[num(v0), num(v1)], &p).unwrap().as_number().unwrap()
        };
        prop_assert_eq!(at(t0), v0);
        prop_assert_eq!(at(t1), v1);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ta = t0 + (lo * span as f64) as u64;
        let tb = t0 + (hi * span as f64) as u64;
        prop_assert!(at(ta) <= at(tb) + 1e-9);
    }

    #[test]
    fn unknown_propagates_through_non_rule_operators(values in prop::collection::vec(definite(), 2..5), hole in any::<prop::sample::Index>()) {
        let repo = FusionRepository::with_builtins();
        let mut inputs: Vec<Value> = values.iter().map(|v| num(*v)).collect();
        let i = hole.index(inputs.len());
        inputs[i] = Value::Unknown;
        let pair = [inputs[0].clone(), inputs[1].clone()];
        let pair_unknown = i < 2;
        let bools: Vec<Value> = inputs.iter().map(|v| v.as_number().map_or(Value::Unknown, |n| Value::Boolean(n > 0.0))).collect();
        let ts: Vec<f64> = (0..inputs.len()).map(|k| k as f64).collect();

        prop_assert_eq!(repo.apply(LOGICAL_AND_ID, &bools, &Params::new()).unwrap(), Value::Unknown);
        prop_assert_eq!(repo.apply(LOGICAL_OR_ID, &bools, &Params::new()).unwrap(), Value::Unknown);
        prop_assert_eq!(repo.apply(LATEST_VALUE_ID, &inputs, &Params::new()).unwrap(), Value::Unknown);
        let wa = params([("timestamps", Param::Numbers(ts)), ("window_ms", Param::Number(1e9))]);
        prop_assert_eq!(repo.apply(WINDOW_AVERAGE_ID, &inputs, &wa).unwrap(), Value::Unknown);
        if pair_unknown {
            prop_assert_eq!(repo.apply(COMPARE_ID, &pair, &op("<")).unwrap(), Value::Unknown);
            let ip = params([("timestamps", Param::Numbers(vec![0.0, 10.0])), ("at", Param::Number(5.0))]);
            prop_assert_eq!(repo.apply(IMPUTE_LINEAR_ID, &pair, &ip).unwrap(), Value::Unknown);
        }
    }

    #[test]
    fn rule_evaluation_matches_oracle_with_unknowns(
        t in prop::option::of(-5.0f64..35.0),
        h in prop::option::of(0.0f64..100.0),
        w in prop::option::of(0.0f64..100.0),
    ) {
        let kb = common::phytophthora_kb();
        let stress = evaluate_rules(
            &kb.rules_for("airStress"),
            &number_bindings(&[("airTemperature", t), ("airHumidity", h)]),
        );
        let expected_stress = air_stress_oracle(t, h);
        prop_assert_eq!(&stress, &text_or_unknown(expected_stress));
        let mut b = number_bindings(&[("leafWetness", w)]);
        b.insert("airStress".into(), stress);
        let disease = evaluate_rules(&kb.rules_for("phytophtoraDiseaseStatus"), &b);
        prop_assert_eq!(disease, text_or_unknown(disease_oracle(expected_stress, w)));
    }
}
