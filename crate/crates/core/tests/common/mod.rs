#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use sensing_core::acquisition::{load_sdd, Acquisition, SddRepository, SensorDeviceDefinition};
use sensing_core::fusion::FusionRepository;
use sensing_core::knowledge::KnowledgeBase;
use sensing_core::registry::{Availability, Location, Registry, SensorDescriptor};
use sensing_core::{AttributeName, ContextAttribute, DocFormat, Value, ValueKind};

pub const DOMAIN: &str = include_str!("../../fixtures/phytophthora/domains/phytophthora.toml");

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/phytophthora")
}

pub fn fixture_config() -> PathBuf {
    fixture_dir().join("config.toml")
}

pub fn unit_of(attribute: &str) -> &'static str {
    match attribute {
        "airTemperature" => "°C",
        "airHumidity" | "leafWetness" => "%",
        _ => "",
    }
}

/// An SDD whose every pull yields `value` for `attribute`.
pub fn constant_sdd(model_id: &str, attribute: &str, value: f64) -> SensorDeviceDefinition {
    let doc = format!(
        "model_id = \"{model_id}\"\nsampling_interval_ms = 1000\n\
         [[attributes]]\nname = \"{attribute}\"\nunit = \"{}\"\nkind = \"number\"\n\
         [driver]\nkind = \"simulated-function\"\nparams = {{ waveform = \"constant\", baseline = {value} }}\n",
        unit_of(attribute)
    );
    load_sdd(doc.as_bytes(), DocFormat::Toml).unwrap()
}

pub fn descriptor(
    sensor_id: &str,
    model_id: &str,
    attributes: &[&str],
    cost_rank: u32,
    label: &str,
) -> SensorDescriptor {
    SensorDescriptor {
        sensor_id: sensor_id.into(),
        model_id: model_id.into(),
        location: Location {
            latitude: -35.28,
            longitude: 149.13,
            label: label.into(),
        },
        availability: Availability::Online,
        cost_rank,
        provided_attributes: attributes
            .iter()
            .map(|a| ContextAttribute::new(*a, unit_of(a), ValueKind::Number))
            .collect(),
    }
}

pub fn phytophthora_kb() -> KnowledgeBase {
    let kb = KnowledgeBase::new();
    kb.load_document(DOMAIN.as_bytes(), DocFormat::Toml)
        .unwrap();
    kb
}

/// Everything a pipeline needs, wired together in memory.
pub struct World {
    pub kb: KnowledgeBase,
    pub registry: Registry,
    pub fusion: FusionRepository,
    pub acquisition: Acquisition,
}

/// The use-case deployment with constant sensors: one sensor per
/// `(sensor_id, attribute, value)`, all at `field-a`.
pub fn constant_world(readings: &[(&str, &str, f64)]) -> World {
    let sdds = SddRepository::in_memory();
    let registry = Registry::new();
    for (sensor_id, attribute, value) in readings {
        let model_id = format!("{sensor_id}-model");
        sdds.insert(constant_sdd(&model_id, attribute, *value));
        registry
            .register_provider(
                descriptor(sensor_id, &model_id, &[attribute], 1, "field-a"),
                0,
            )
            .unwrap();
    }
    World {
        kb: phytophthora_kb(),
        registry,
        fusion: FusionRepository::with_builtins(),
        acquisition: Acquisition::new(sdds),
    }
}

pub fn use_case_world(t: f64, h: f64, w: f64) -> World {
    constant_world(&[
        ("t-1", "airTemperature", t),
        ("h-1", "airHumidity", h),
        ("lw-1", "leafWetness", w),
    ])
}

/// Independent reading of the use-case rules: each rule's conditions are
/// tested in full, separately from the engine's evaluator.
pub fn air_stress_oracle(t: Option<f64>, h: Option<f64>) -> Option<&'static str> {
    let (t, h) = (t?, h?);
    let low = t < 12.0 && h < 25.0;
    let high = t >= 12.0 && h >= 25.0;
    match (low, high) {
        (true, _) => Some("low"),
        (false, true) => Some("high"),
        (false, false) => None,
    }
}

pub fn disease_oracle(stress: Option<&str>, wetness: Option<f64>) -> Option<&'static str> {
    let (stress, wetness) = (stress?, wetness?);
    if stress == "high" && wetness > 50.0 {
        Some("infected")
    } else {
        Some("not-infected")
    }
}

pub fn number_bindings(pairs: &[(&str, Option<f64>)]) -> BTreeMap<AttributeName, Value> {
    pairs
        .iter()
        .map(|(a, v)| (a.to_string(), v.map_or(Value::Unknown, Value::Number)))
        .collect()
}

pub fn text_or_unknown(v: Option<&str>) -> Value {
    v.map_or(Value::Unknown, Value::text)
}
