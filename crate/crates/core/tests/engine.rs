mod common;

use std::fs;
use std::path::{Path, PathBuf};

use sensing_core::discoverer::DiscovererState;
use sensing_core::dissemination::{parse_json_line, SubscriptionStatus};
use sensing_core::engine::{
    boot_simulated, run_scenario, validate_artifact, ArtifactKind, EngineOptions, Listing,
    RunOptions,
};
use sensing_core::registry::Availability;
use sensing_core::{ClockMode, DocFormat, Engine, EngineError, ScenarioConfig, Value};

const STREAM_REQUEST: &str = r#"{
  "request": {
    "attributes": ["phytophtoraDiseaseStatus"],
    "location": "field-a",
    "format": "json-lines",
    "interval_ms": 1000,
    "annotations": true
  },
  "user": { "id": "john", "sink": { "kind": "stream-endpoint" } }
}"#;

fn fixture(rel: &str) -> PathBuf {
    common::fixture_dir().join(rel)
}

/// Writes a scenario config into `dir` pointing at the shared fixtures.
fn scenario(
    dir: &Path,
    fleet: &Path,
    domains: &[&str],
    requests: &[PathBuf],
    extra: &str,
) -> PathBuf {
    let list = |items: Vec<String>| {
        items
            .iter()
            .map(|p| format!("{p:?}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let doc = format!(
        "sdd_directory = {:?}\nfleet_file = {:?}\ndomain_files = [{}]\nrequests = [{}]\nrun_for_ms = 10000\n{extra}",
        fixture("sdd").display().to_string(),
        fleet.display().to_string(),
        list(domains.iter().map(|d| fixture(d).display().to_string()).collect()),
        list(requests.iter().map(|p| p.display().to_string()).collect()),
    );
    let path = dir.join("scenario.toml");
    fs::write(&path, doc).unwrap();
    path
}

fn boot() -> Engine {
    boot_simulated(&common::fixture_config(), None).unwrap()
}

fn lines(path: &Path) -> Vec<sensing_core::dissemination::ParsedRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| parse_json_line(l).unwrap().0)
        .collect()
}

fn expected_stress(r: &sensing_core::dissemination::ParsedRecord) -> Value {
    common::text_or_unknown(common::air_stress_oracle(
        r.values["airTemperature"].as_number(),
        r.values["airHumidity"].as_number(),
    ))
}

#[test]
fn boots_the_fixture_inventory() {
    let engine = boot();
    assert_eq!(engine.registry().len(), 3);
    assert_eq!(engine.knowledge().domain_count(), 1);
    assert_eq!(
        engine.inspect(Listing::Sensors).as_array().unwrap().len(),
        3
    );
    let attrs = engine.inspect(Listing::Attributes);
    let stress = attrs
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["attribute"]["name"] == "airStress")
        .unwrap();
    assert_eq!(stress["derivable"], true);
    assert_eq!(stress["provider_count"], 0);
}

#[test]
fn unknown_model_fails_boot() {
    let dir = tempfile::tempdir().unwrap();
    let fleet = dir.path().join("fleet.toml");
    fs::write(
        &fleet,
        "[[sensors]]\nsensor_id = \"x-1\"\nmodel_id = \"nope-9\"\n\
         location = { latitude = 0, longitude = 0, label = \"a\" }\ncost_rank = 1\n",
    )
    .unwrap();
    let config = scenario(dir.path(), &fleet, &[], &[], "");
    let err = boot_simulated(&config, None).unwrap_err();
    assert!(matches!(&err, EngineError::UnknownModel { model_id, .. } if model_id == "nope-9"));
    assert_eq!(err.code(), "unknown-model");
    assert!(err.to_string().contains("nope-9"));
}

#[test]
fn boots_without_domains() {
    let dir = tempfile::tempdir().unwrap();
    let config = scenario(dir.path(), &fixture("fleet.toml"), &[], &[], "");
    let engine = boot_simulated(&config, None).unwrap();
    assert_eq!(engine.knowledge().domain_count(), 0);
    let err = engine
        .submit(STREAM_REQUEST.as_bytes(), DocFormat::Json)
        .unwrap_err();
    assert_eq!(err.code(), "unknown-attribute");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn inspect_before_any_request() {
    let engine = boot();
    assert_eq!(engine.inspect(Listing::Plans), serde_json::json!([]));
    assert_eq!(
        engine.inspect(Listing::Subscriptions),
        serde_json::json!([])
    );
    let ops = engine.inspect(Listing::Operators);
    assert!(ops
        .as_array()
        .unwrap()
        .iter()
        .any(|o| o["operator_id"] == "builtin.rule-eval"));
    assert!("bogus".parse::<Listing>().is_err());
}

#[test]
fn duplicate_request_reuses_the_pipeline() {
    let engine = boot();
    let first = engine
        .submit(STREAM_REQUEST.as_bytes(), DocFormat::Json)
        .unwrap();
    assert!(!first.reused);
    assert_eq!(
        (first.plan_summary.sources, first.plan_summary.derived),
        (3, 2)
    );
    let second = engine
        .submit(STREAM_REQUEST.as_bytes(), DocFormat::Json)
        .unwrap();
    assert!(second.reused);
    assert_eq!(second.plan_id, first.plan_id);
    assert_ne!(second.subscription_id, first.subscription_id);
    assert_eq!(engine.discoverers().registration_count(), 1);
    let plans = engine.inspect(Listing::Plans);
    assert_eq!(plans.as_array().unwrap().len(), 1);
    assert_eq!(plans[0]["subscriber_count"], 2);
    assert_eq!(
        engine
            .inspect(Listing::Subscriptions)
            .as_array()
            .unwrap()
            .len(),
        2
    );
}

#[test]
fn stream_subscription_delivers_once_per_interval() {
    let engine = boot();
    let receipt = engine
        .submit(STREAM_REQUEST.as_bytes(), DocFormat::Json)
        .unwrap();
    engine.run_for(10_000);
    let report = engine.shutdown();
    let text =
        String::from_utf8(engine.stream_contents(&receipt.subscription_id).unwrap()).unwrap();
    let stamps: Vec<u64> = text
        .lines()
        .map(|l| parse_json_line(l).unwrap().0.timestamp)
        .collect();
    assert_eq!(stamps, (0..10).map(|i| i * 1000).collect::<Vec<_>>());
    assert_eq!(report.subscriptions[0].delivered, 10);
    assert_eq!(report.subscriptions[0].status, SubscriptionStatus::Active);
}

#[test]
fn offline_humidity_rejects_new_requests() {
    let engine = boot();
    let h = engine.registry().by_sensor_id("h-1").unwrap();
    engine
        .registry()
        .set_availability(h.provider_id, Availability::Offline)
        .unwrap();
    let err = engine
        .submit(STREAM_REQUEST.as_bytes(), DocFormat::Json)
        .unwrap_err();
    assert_eq!(err.code(), "unsatisfiable-attribute");
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("airStress"));
}

#[test]
fn malformed_request_is_a_validation_error() {
    let engine = boot();
    let err = engine
        .submit(b"{\"request\": {}}", DocFormat::Json)
        .unwrap_err();
    assert_eq!(err.code(), "schema-violation");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn zero_duration_run_delivers_nothing() {
    let out = tempfile::tempdir().unwrap();
    let config = ScenarioConfig::load(&common::fixture_config()).unwrap();
    let report = run_scenario(
        &config,
        &RunOptions {
            out_dir: out.path().to_path_buf(),
            run_for_ms: Some(0),
            clock_mode: None,
        },
    )
    .unwrap();
    assert_eq!(report.subscriptions.len(), 1);
    assert_eq!(report.subscriptions[0].delivered, 0);
    assert_eq!(report.exit_code, 0);
    assert!(out.path().join("report.json").is_file());
}

#[test]
fn scenario_run_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let config = ScenarioConfig::load(&common::fixture_config()).unwrap();
    let options = RunOptions {
        out_dir: out.path().to_path_buf(),
        ..Default::default()
    };
    let report = run_scenario(&config, &options).unwrap();
    assert_eq!(report.exit_code, 0);
    assert_eq!(report.plans.len(), 1);
    let plan_file = out
        .path()
        .join("plans")
        .join(format!("{}.json", report.plans[0]));
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(plan_file).unwrap()).unwrap();
    assert_eq!(plan["nodes"].as_array().unwrap().len(), 5);
    let records = lines(&out.path().join("john.jsonl"));
    assert_eq!(records.len(), 60);
    for r in &records {
        assert_eq!(
            r.values["airStress"],
            expected_stress(r),
            "at {}",
            r.timestamp
        );
        assert!(!r.values["airHumidity"].is_unknown());
    }

    // A second run into the same directory replaces, not appends.
    run_scenario(&config, &options).unwrap();
    assert_eq!(lines(&out.path().join("john.jsonl")).len(), 60);
}

#[test]
fn humidity_fault_turns_results_unknown() {
    let out = tempfile::tempdir().unwrap();
    let config = ScenarioConfig::load(&fixture("fault.toml")).unwrap();
    let report = run_scenario(
        &config,
        &RunOptions {
            out_dir: out.path().to_path_buf(),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(report.exit_code, 0);
    let records = lines(&out.path().join("john.jsonl"));
    assert_eq!(records.len(), 60);
    for r in &records {
        let after = r.timestamp >= 30_000;
        assert_eq!(
            r.values["airHumidity"].is_unknown(),
            after,
            "at {}",
            r.timestamp
        );
        assert_eq!(
            r.values["airStress"],
            expected_stress(r),
            "at {}",
            r.timestamp
        );
        if after {
            assert_eq!(r.values["airStress"], Value::Unknown);
            assert_eq!(r.values["phytophtoraDiseaseStatus"], Value::Unknown);
        }
        assert!(!r.values["airTemperature"].is_unknown());
        assert!(!r.values["leafWetness"].is_unknown());
    }
}

#[test]
fn simulated_runs_are_reproducible() {
    let run = || {
        let out = tempfile::tempdir().unwrap();
        let config = ScenarioConfig::load(&common::fixture_config()).unwrap();
        run_scenario(
            &config,
            &RunOptions {
                out_dir: out.path().to_path_buf(),
                ..Default::default()
            },
        )
        .unwrap();
        fs::read(out.path().join("john.jsonl")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn expiring_request_stops_its_pipeline() {
    let engine = boot();
    let doc = STREAM_REQUEST.replace(
        "\"interval_ms\": 1000,",
        "\"interval_ms\": 1000, \"duration_ms\": 5000,",
    );
    let receipt = engine.submit(doc.as_bytes(), DocFormat::Json).unwrap();
    engine.run_for(20_000);
    let key = engine
        .subscriptions()
        .get(&receipt.subscription_id, engine.now())
        .unwrap()
        .canonical_key;
    assert_eq!(
        engine.discoverer_state(&key),
        Some(DiscovererState::Stopped)
    );
    let report = engine.shutdown();
    assert_eq!(report.subscriptions[0].status, SubscriptionStatus::Expired);
    assert!((4..=6).contains(&report.subscriptions[0].delivered));
}

#[test]
fn real_clock_runs_against_wall_time() {
    let config = ScenarioConfig::load(&common::fixture_config()).unwrap();
    let engine = Engine::boot(
        &config,
        EngineOptions {
            out_dir: None,
            clock_mode: Some(ClockMode::Real),
        },
    )
    .unwrap();
    let receipt = engine
        .submit(STREAM_REQUEST.as_bytes(), DocFormat::Json)
        .unwrap();
    engine.run_for(1_500);
    engine.shutdown();
    let text =
        String::from_utf8(engine.stream_contents(&receipt.subscription_id).unwrap()).unwrap();
    let n = text.lines().count();
    assert!((1..=3).contains(&n), "{n} deliveries");
    let first = parse_json_line(text.lines().next().unwrap()).unwrap().0;
    assert!(matches!(first.values["airTemperature"], Value::Number(_)));
}

#[test]
fn fixture_documents_validate() {
    let cases = [
        ("sdd/tmp-100.toml", ArtifactKind::Sdd),
        ("domains/phytophthora.toml", ArtifactKind::Domain),
        ("requests/john.toml", ArtifactKind::Request),
        ("fleet.toml", ArtifactKind::Fleet),
        ("config.toml", ArtifactKind::Scenario),
        ("fault.toml", ArtifactKind::Scenario),
    ];
    for (rel, kind) in cases {
        assert_eq!(
            validate_artifact(&fixture(rel), None).unwrap(),
            kind,
            "{rel}"
        );
    }
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[request]\nattributes = [\"a\"]\nformat = \"xml\"\ninterval_ms = 1\nannotations = true\n[user]\nid = \"u\"\nsink = { kind = \"stream-endpoint\" }\n").unwrap();
    let err = validate_artifact(&bad, None).unwrap_err();
    assert_eq!(err.code(), "unsupported-format");
    assert_eq!(err.exit_code(), 1);
}
