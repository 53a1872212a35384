//! Sensor data acquisition: device definitions (SDDs), wrapper generation and
//! caching, and timestamped reads from simulated drivers.
//!
//! A [`SensorWrapper`] is resolved repository-first: the wrapper repository is
//! consulted, and only on a miss is the SDD fetched and a wrapper generated.
//! Generated wrappers are cached before they are returned. Each pipeline gets
//! its own wrapper instance (a clone of the cached one), so reads never share
//! driver state.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Timestamp};
use crate::document::{self, DocFormat};
use crate::value::{AttributeName, ContextAttribute, GeoPoint, Literal, Value, ValueKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("malformed SDD: {0}")]
    MalformedSdd(String),
    #[error("invalid SDD `{field}`: {message}")]
    InvalidSdd { field: String, message: String },
    #[error("unsupported driver kind `{0}`")]
    UnsupportedDriver(String),
    #[error("driver configuration for `{model_id}`: {message}")]
    DriverConfig { model_id: String, message: String },
    #[error("no wrapper or SDD available for model `{0}`")]
    WrapperUnavailable(String),
    #[error("sensor fault on `{model_id}`: {reason}")]
    SensorFault { model_id: String, reason: String },
    #[error("reading {path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> AcquisitionError {
    AcquisitionError::InvalidSdd {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DriverKind {
    SimulatedFunction,
    SimulatedTrace,
    ExternalStub,
    /// A kind this build has no driver for; wrapper generation rejects it.
    Other(String),
}

impl DriverKind {
    pub fn as_str(&self) -> &str {
        match self {
            DriverKind::SimulatedFunction => "simulated-function",
            DriverKind::SimulatedTrace => "simulated-trace",
            DriverKind::ExternalStub => "external-stub",
            DriverKind::Other(s) => s,
        }
    }
}

impl From<&str> for DriverKind {
    fn from(s: &str) -> Self {
        match s {
            "simulated-function" => DriverKind::SimulatedFunction,
            "simulated-trace" => DriverKind::SimulatedTrace,
            "external-stub" => DriverKind::ExternalStub,
            other => DriverKind::Other(other.to_string()),
        }
    }
}

impl fmt::Display for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for DriverKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DriverKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(DriverKind::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub kind: DriverKind,
    #[serde(default)]
    pub params: BTreeMap<String, Literal>,
}

/// Declarative description of a sensor model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorDeviceDefinition {
    pub model_id: String,
    pub provided_attributes: Vec<ContextAttribute>,
    pub sampling_interval_ms: u64,
    pub driver: DriverSpec,
    /// Directory relative trace paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSdd {
    model_id: String,
    #[serde(default)]
    attributes: Vec<ContextAttribute>,
    sampling_interval_ms: i64,
    driver: DriverSpec,
}

impl SensorDeviceDefinition {
    pub fn validate(&self) -> Result<(), AcquisitionError> {
        if self.model_id.trim().is_empty() {
            return Err(invalid("model_id", "must be non-empty"));
        }
        if self.provided_attributes.is_empty() {
            return Err(invalid("attributes", "at least one attribute is required"));
        }
        let mut seen = BTreeSet::new();
        for a in &self.provided_attributes {
            if a.name.trim().is_empty() {
                return Err(invalid("attributes.name", "must be non-empty"));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(invalid(
                    "attributes.name",
                    format!("duplicate attribute `{}`", a.name),
                ));
            }
        }
        if self.sampling_interval_ms == 0 {
            return Err(invalid("sampling_interval_ms", "must be >= 1"));
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<&ContextAttribute> {
        self.provided_attributes.iter().find(|a| a.name == name)
    }
}

/// Parses and validates an SDD document.
pub fn load_sdd(
    document: &[u8],
    format: DocFormat,
) -> Result<SensorDeviceDefinition, AcquisitionError> {
    let raw: RawSdd = document::parse(document, format).map_err(AcquisitionError::MalformedSdd)?;
    if raw.sampling_interval_ms < 1 {
        return Err(invalid(
            "sampling_interval_ms",
            format!("must be >= 1, got {}", raw.sampling_interval_ms),
        ));
    }
    let sdd = SensorDeviceDefinition {
        model_id: raw.model_id,
        provided_attributes: raw.attributes,
        sampling_interval_ms: raw.sampling_interval_ms as u64,
        driver: raw.driver,
        base_dir: None,
    };
    sdd.validate()?;
    Ok(sdd)
}

/// Reads an SDD file; relative trace paths then resolve against its directory.
pub fn load_sdd_file(path: &Path) -> Result<SensorDeviceDefinition, AcquisitionError> {
    let bytes = std::fs::read(path).map_err(|e| AcquisitionError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut sdd = load_sdd(&bytes, DocFormat::from_path(path))?;
    sdd.base_dir = path.parent().map(Path::to_path_buf);
    Ok(sdd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WrapperOrigin {
    RepositoryCached,
    GeneratedFromSdd,
}

/// One timestamped bundle of attribute values read from a wrapper.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub timestamp: Timestamp,
    pub values: BTreeMap<AttributeName, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Waveform {
    Constant,
    Sine,
    Square,
    Ramp,
}

#[derive(Debug, Clone)]
struct FunctionChannel {
    attribute: ContextAttribute,
    waveform: Waveform,
    baseline: f64,
    amplitude: f64,
    period_ms: f64,
    phase_ms: f64,
    noise: Option<Normal<f64>>,
    decimals: Option<i32>,
    text: Option<String>,
    geo: Option<GeoPoint>,
}

impl FunctionChannel {
    fn sample(&self, t: Timestamp, rng: &mut ChaCha8Rng) -> Value {
        match self.attribute.kind {
            ValueKind::String => return Value::Text(self.text.clone().unwrap_or_default()),
            ValueKind::Geo => {
                return self.geo.map(Value::Geo).unwrap_or(Value::Unknown);
            }
            _ => {}
        }
        let phase = ((t as f64 + self.phase_ms) / self.period_ms).rem_euclid(1.0);
        let shape = match self.waveform {
            Waveform::Constant => 0.0,
            Waveform::Sine => (TAU * phase).sin(),
            Waveform::Square => {
                if phase < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            Waveform::Ramp => 2.0 * phase - 1.0,
        };
        let mut v = self.baseline + self.amplitude * shape;
        if let Some(n) = &self.noise {
            v += n.sample(rng);
        }
        if let Some(d) = self.decimals {
            let scale = 10f64.powi(d);
            v = (v * scale).round() / scale;
        }
        match self.attribute.kind {
            ValueKind::Boolean => Value::Boolean(v > 0.0),
            _ => Value::Number(v),
        }
    }
}

#[derive(Debug, Clone)]
enum Driver {
    Function {
        channels: Arc<Vec<FunctionChannel>>,
        rng: Box<ChaCha8Rng>,
    },
    Trace {
        columns: Arc<Vec<AttributeName>>,
        rows: Arc<Vec<Vec<Value>>>,
        cursor: usize,
        looping: bool,
    },
    Stub,
}

/// Adapter that yields timestamped readings for one sensor model.
///
/// Cloning yields an independent instance with a copy of the driver state.
#[derive(Debug, Clone)]
pub struct SensorWrapper {
    model_id: String,
    attributes: Arc<Vec<ContextAttribute>>,
    sampling_interval_ms: u64,
    origin: WrapperOrigin,
    driver: Driver,
    last_timestamp: Option<Timestamp>,
}

impl SensorWrapper {
    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn attributes(&self) -> &[ContextAttribute] {
        &self.attributes
    }

    pub fn sampling_interval_ms(&self) -> u64 {
        self.sampling_interval_ms
    }

    pub fn origin(&self) -> WrapperOrigin {
        self.origin
    }

    /// Reads one value per declared attribute, stamped with the clock's time.
    ///
    /// Timestamps never go backwards within one instance, even if the clock does.
    pub fn pull(&mut self, clock: &dyn Clock) -> Result<Reading, AcquisitionError> {
        let now = clock.now_ms();
        let timestamp = self.last_timestamp.map_or(now, |last| last.max(now));
        let values = match &mut self.driver {
            Driver::Function { channels, rng } => channels
                .iter()
                .map(|c| (c.attribute.name.clone(), c.sample(timestamp, rng)))
                .collect(),
            Driver::Trace {
                columns,
                rows,
                cursor,
                looping,
            } => {
                if *cursor >= rows.len() {
                    if *looping && !rows.is_empty() {
                        *cursor = 0;
                    } else {
                        return Err(AcquisitionError::SensorFault {
                            model_id: self.model_id.clone(),
                            reason: "trace exhausted".into(),
                        });
                    }
                }
                let row = &rows[*cursor];
                *cursor += 1;
                columns.iter().cloned().zip(row.iter().cloned()).collect()
            }
            Driver::Stub => {
                return Err(AcquisitionError::SensorFault {
                    model_id: self.model_id.clone(),
                    reason: "no external driver attached".into(),
                })
            }
        };
        self.last_timestamp = Some(timestamp);
        Ok(Reading { timestamp, values })
    }
}

/// Free-function form of [`SensorWrapper::pull`].
pub fn pull_reading(
    wrapper: &mut SensorWrapper,
    clock: &dyn Clock,
) -> Result<Reading, AcquisitionError> {
    wrapper.pull(clock)
}

/// Looks up `<attr>.<key>` first, then `<key>`.
fn param<'a>(params: &'a BTreeMap<String, Literal>, attr: &str, key: &str) -> Option<&'a Literal> {
    params
        .get(&format!("{attr}.{key}"))
        .or_else(|| params.get(key))
}

fn num_param(
    sdd: &SensorDeviceDefinition,
    attr: &str,
    key: &str,
    default: f64,
) -> Result<f64, AcquisitionError> {
    match param(&sdd.driver.params, attr, key) {
        None => Ok(default),
        Some(l) => l.as_number().ok_or_else(|| AcquisitionError::DriverConfig {
            model_id: sdd.model_id.clone(),
            message: format!("parameter `{key}` must be a number"),
        }),
    }
}

fn function_driver(sdd: &SensorDeviceDefinition) -> Result<Driver, AcquisitionError> {
    let config_err = |message: String| AcquisitionError::DriverConfig {
        model_id: sdd.model_id.clone(),
        message,
    };
    let mut channels = Vec::with_capacity(sdd.provided_attributes.len());
    for attr in &sdd.provided_attributes {
        let name = attr.name.as_str();
        let waveform = match param(&sdd.driver.params, name, "waveform").map(|l| l.to_string()) {
            None => Waveform::Constant,
            Some(w) => match w.as_str() {
                "constant" => Waveform::Constant,
                "sine" => Waveform::Sine,
                "square" => Waveform::Square,
                "ramp" => Waveform::Ramp,
                other => return Err(config_err(format!("unknown waveform `{other}`"))),
            },
        };
        let period_ms = num_param(sdd, name, "period_ms", 60_000.0)?;
        if period_ms <= 0.0 {
            return Err(config_err("period_ms must be > 0".into()));
        }
        let sd = num_param(sdd, name, "noise", 0.0)?;
        let noise = if sd > 0.0 {
            Some(Normal::new(0.0, sd).map_err(|e| config_err(e.to_string()))?)
        } else {
            None
        };
        let decimals = param(&sdd.driver.params, name, "decimals")
            .map(|l| {
                l.as_number()
                    .map(|d| d as i32)
                    .ok_or_else(|| config_err("decimals must be a number".into()))
            })
            .transpose()?;
        let geo = match (
            param(&sdd.driver.params, name, "lat"),
            param(&sdd.driver.params, name, "lon"),
        ) {
            (Some(lat), Some(lon)) => Some(GeoPoint {
                lat: lat
                    .as_number()
                    .ok_or_else(|| config_err("lat must be a number".into()))?,
                lon: lon
                    .as_number()
                    .ok_or_else(|| config_err("lon must be a number".into()))?,
            }),
            _ => None,
        };
        channels.push(FunctionChannel {
            attribute: attr.clone(),
            waveform,
            baseline: num_param(sdd, name, "baseline", 0.0)?,
            amplitude: num_param(sdd, name, "amplitude", 0.0)?,
            period_ms,
            phase_ms: num_param(sdd, name, "phase_ms", 0.0)?,
            noise,
            decimals,
            text: param(&sdd.driver.params, name, "value").map(|l| l.to_string()),
            geo,
        });
    }
    let seed = sdd
        .driver
        .params
        .get("seed")
        .and_then(Literal::as_number)
        .unwrap_or(0.0) as u64;
    Ok(Driver::Function {
        channels: Arc::new(channels),
        rng: Box::new(ChaCha8Rng::seed_from_u64(seed)),
    })
}

fn trace_driver(sdd: &SensorDeviceDefinition) -> Result<Driver, AcquisitionError> {
    let config_err = |message: String| AcquisitionError::DriverConfig {
        model_id: sdd.model_id.clone(),
        message,
    };
    let file = sdd
        .driver
        .params
        .get("file")
        .and_then(Literal::as_str)
        .ok_or_else(|| config_err("simulated-trace requires a `file` parameter".into()))?;
    let looping = match sdd.driver.params.get("loop") {
        None => true,
        Some(l) => l
            .as_bool()
            .ok_or_else(|| config_err("`loop` must be a boolean".into()))?,
    };
    let path = match &sdd.base_dir {
        Some(dir) if Path::new(file).is_relative() => dir.join(file),
        _ => PathBuf::from(file),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| AcquisitionError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let (columns, rows) = parse_trace(&text, sdd).map_err(config_err)?;
    Ok(Driver::Trace {
        columns: Arc::new(columns),
        rows: Arc::new(rows),
        cursor: 0,
        looping,
    })
}

/// Parses a trace: header `timestamp,<attr>...`, then one row per reading.
/// Rows are replayed in file order; their timestamps are informational.
fn parse_trace(
    text: &str,
    sdd: &SensorDeviceDefinition,
) -> Result<(Vec<AttributeName>, Vec<Vec<Value>>), String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| format!("trace header: {e}"))?
        .clone();
    let mut fields = header.iter();
    if fields.next() != Some("timestamp") {
        return Err("trace header must start with `timestamp`".into());
    }
    let columns: Vec<String> = fields.map(str::to_string).collect();
    let mut kinds = Vec::with_capacity(columns.len());
    for c in &columns {
        let attr = sdd
            .attribute(c)
            .ok_or_else(|| format!("trace column `{c}` is not a declared attribute"))?;
        kinds.push(attr.kind);
    }
    for a in &sdd.provided_attributes {
        if !columns.contains(&a.name) {
            return Err(format!("trace has no column for attribute `{}`", a.name));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("trace row {}: {e}", i + 1))?;
        let mut row = Vec::with_capacity(columns.len());
        for (j, kind) in kinds.iter().enumerate() {
            let raw = record.get(j + 1).unwrap_or("");
            let v = Value::parse_as(*kind, raw)
                .ok_or_else(|| format!("trace row {}: cannot read `{raw}` as {kind}", i + 1))?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok((columns, rows))
}

/// Builds a wrapper realizing the SDD's driver.
pub fn generate_wrapper(sdd: &SensorDeviceDefinition) -> Result<SensorWrapper, AcquisitionError> {
    let driver = match &sdd.driver.kind {
        DriverKind::SimulatedFunction => function_driver(sdd)?,
        DriverKind::SimulatedTrace => trace_driver(sdd)?,
        DriverKind::ExternalStub => Driver::Stub,
        DriverKind::Other(kind) => return Err(AcquisitionError::UnsupportedDriver(kind.clone())),
    };
    Ok(SensorWrapper {
        model_id: sdd.model_id.clone(),
        attributes: Arc::new(sdd.provided_attributes.clone()),
        sampling_interval_ms: sdd.sampling_interval_ms,
        origin: WrapperOrigin::GeneratedFromSdd,
        driver,
        last_timestamp: None,
    })
}

/// Generates wrappers and counts how many it has produced.
#[derive(Debug, Default)]
pub struct WrapperGenerator {
    generated: AtomicUsize,
}

impl WrapperGenerator {
    pub fn generate(
        &self,
        sdd: &SensorDeviceDefinition,
    ) -> Result<SensorWrapper, AcquisitionError> {
        let w = generate_wrapper(sdd)?;
        self.generated.fetch_add(1, Ordering::SeqCst);
        tracing::debug!(model_id = %sdd.model_id, "generated sensor wrapper");
        Ok(w)
    }

    pub fn generated_count(&self) -> usize {
        self.generated.load(Ordering::SeqCst)
    }
}

/// Cache of ready wrappers keyed by model id.
#[derive(Debug, Default)]
pub struct WrapperRepository {
    wrappers: RwLock<BTreeMap<String, SensorWrapper>>,
}

impl WrapperRepository {
    pub fn new() -> Self {
        Self::default()
    }

    /// A fresh instance of the cached wrapper, tagged as repository-cached.
    pub fn get(&self, model_id: &str) -> Option<SensorWrapper> {
        let guard = self.wrappers.read().expect("wrapper repository poisoned");
        guard.get(model_id).map(|w| {
            let mut w = w.clone();
            w.origin = WrapperOrigin::RepositoryCached;
            w
        })
    }

    pub fn insert(&self, wrapper: SensorWrapper) {
        self.wrappers
            .write()
            .expect("wrapper repository poisoned")
            .insert(wrapper.model_id.clone(), wrapper);
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.wrappers
            .read()
            .expect("wrapper repository poisoned")
            .contains_key(model_id)
    }

    pub fn len(&self) -> usize {
        self.wrappers
            .read()
            .expect("wrapper repository poisoned")
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// SDDs from a local directory, an optional second directory standing in for
/// a remote tier, and an in-memory overlay. Files are named `<model_id>.toml`
/// or `<model_id>.json`.
#[derive(Debug, Default)]
pub struct SddRepository {
    tiers: Vec<PathBuf>,
    overlay: RwLock<BTreeMap<String, SensorDeviceDefinition>>,
    lookups: AtomicUsize,
}

impl SddRepository {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_tiers(tiers: impl IntoIterator<Item = PathBuf>) -> Self {
        Self {
            tiers: tiers.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn insert(&self, sdd: SensorDeviceDefinition) {
        self.overlay
            .write()
            .expect("sdd repository poisoned")
            .insert(sdd.model_id.clone(), sdd);
    }

    /// Number of `get` calls so far.
    pub fn lookup_count(&self) -> usize {
        self.lookups.load(Ordering::SeqCst)
    }

    pub fn get(&self, model_id: &str) -> Result<Option<SensorDeviceDefinition>, AcquisitionError> {
        self.lookups.fetch_add(1, Ordering::SeqCst);
        if let Some(sdd) = self
            .overlay
            .read()
            .expect("sdd repository poisoned")
            .get(model_id)
        {
            return Ok(Some(sdd.clone()));
        }
        for dir in &self.tiers {
            for ext in [DocFormat::Toml, DocFormat::Json] {
                let path = dir.join(format!("{model_id}.{}", ext.extension()));
                if path.is_file() {
                    let sdd = load_sdd_file(&path)?;
                    check_filename(&sdd, model_id)?;
                    return Ok(Some(sdd));
                }
            }
        }
        Ok(None)
    }

    /// Every SDD in every tier plus the overlay. The first tier holding a
    /// model id wins.
    pub fn load_all(&self) -> Result<BTreeMap<String, SensorDeviceDefinition>, AcquisitionError> {
        let mut out = self
            .overlay
            .read()
            .expect("sdd repository poisoned")
            .clone();
        for dir in &self.tiers {
            let entries = std::fs::read_dir(dir).map_err(|e| AcquisitionError::Io {
                path: dir.clone(),
                message: e.to_string(),
            })?;
            let mut paths: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("toml") | Some("json")
                    )
                })
                .collect();
            paths.sort();
            for path in paths {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let sdd = load_sdd_file(&path)?;
                check_filename(&sdd, &stem)?;
                out.entry(stem).or_insert(sdd);
            }
        }
        Ok(out)
    }
}

fn check_filename(sdd: &SensorDeviceDefinition, stem: &str) -> Result<(), AcquisitionError> {
    if sdd.model_id != stem {
        return Err(invalid(
            "model_id",
            format!("`{}` does not match file name `{stem}`", sdd.model_id),
        ));
    }
    Ok(())
}

/// Repository-first wrapper lookup. On a miss the SDD is fetched, a wrapper
/// generated and cached, and a fresh instance returned.
pub fn resolve_wrapper(
    model_id: &str,
    wrappers: &WrapperRepository,
    sdds: &SddRepository,
    generator: &WrapperGenerator,
) -> Result<SensorWrapper, AcquisitionError> {
    if let Some(w) = wrappers.get(model_id) {
        return Ok(w);
    }
    let sdd = sdds
        .get(model_id)?
        .ok_or_else(|| AcquisitionError::WrapperUnavailable(model_id.to_string()))?;
    let wrapper = generator.generate(&sdd)?;
    wrappers.insert(wrapper.clone());
    Ok(wrapper)
}

/// The acquisition layer's repositories bundled together.
#[derive(Debug, Default)]
pub struct Acquisition {
    pub wrappers: WrapperRepository,
    pub sdds: SddRepository,
    pub generator: WrapperGenerator,
}

impl Acquisition {
    pub fn new(sdds: SddRepository) -> Self {
        Self {
            sdds,
            ..Self::default()
        }
    }

    pub fn resolve(&self, model_id: &str) -> Result<SensorWrapper, AcquisitionError> {
        resolve_wrapper(model_id, &self.wrappers, &self.sdds, &self.generator)
    }
}
