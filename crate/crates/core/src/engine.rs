//! Boot from a scenario config, submit requests, inspect state, run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::acquisition::{Acquisition, AcquisitionError, SddRepository};
use crate::clock::{Clock, ClockMode, SimulatedClock, SystemClock, Timestamp};
use crate::discoverer::{self, DiscovererError, DiscovererRepository, DiscovererState};
use crate::dissemination::{
    self, AppendFileSink, DisseminationError, MemorySink, Sink, SinkKind, SubscriptionDispatcher,
    SubscriptionStatus, SubscriptionStore,
};
use crate::document::DocFormat;
use crate::fusion::{FusionError, FusionRepository};
use crate::knowledge::{self, KnowledgeBase, KnowledgeError};
use crate::reasoning::{self, PlanSpec, ReasoningError};
use crate::registry::{self, Availability, Registry, RegistryError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<EngineError>,
    },
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error(transparent)]
    Discoverer(#[from] DiscovererError),
    #[error(transparent)]
    Dissemination(#[from] DisseminationError),
    #[error("unknown model `{model_id}` for sensor `{sensor_id}`: no device definition found")]
    UnknownModel { sensor_id: String, model_id: String },
    #[error("unknown sensor `{0}` in scenario event")]
    UnknownSensor(String),
    #[error(
        "unknown listing `{0}` (expected sensors, attributes, plans, operators or subscriptions)"
    )]
    UnknownListing(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl EngineError {
    fn in_file(self, path: &Path) -> EngineError {
        EngineError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }

    /// Stable, machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Config { .. } => "config-invalid",
            EngineError::InFile { source, .. } => source.code(),
            EngineError::Acquisition(e) => match e {
                AcquisitionError::MalformedSdd(_) => "malformed-sdd",
                AcquisitionError::InvalidSdd { .. } => "invalid-sdd",
                AcquisitionError::UnsupportedDriver(_) => "unsupported-driver",
                AcquisitionError::DriverConfig { .. } => "driver-config",
                AcquisitionError::WrapperUnavailable(_) => "wrapper-unavailable",
                AcquisitionError::SensorFault { .. } => "sensor-fault",
                AcquisitionError::Io { .. } => "io",
            },
            EngineError::Registry(e) => match e {
                RegistryError::DuplicateSensorId(_) => "duplicate-sensor-id",
                RegistryError::UnknownProvider(_) => "unknown-provider",
                RegistryError::InvalidDescriptor { .. } => "invalid-descriptor",
                RegistryError::MalformedFleet(_) => "malformed-fleet",
            },
            EngineError::Knowledge(e) => match e {
                KnowledgeError::MalformedDomain(_) => "malformed-domain",
                KnowledgeError::InvalidRule { .. } => "invalid-rule",
                KnowledgeError::InvalidDomain(_) => "invalid-domain",
                KnowledgeError::CyclicDependency(_) => "cyclic-dependency",
                KnowledgeError::DuplicateDomain(_) => "duplicate-domain",
                KnowledgeError::DuplicateRuleId(_) => "duplicate-rule-id",
                KnowledgeError::KindConflict { .. } => "kind-conflict",
                KnowledgeError::UnknownAttribute(_) => "unknown-attribute",
            },
            EngineError::Fusion(FusionError::NoOperatorFound(_)) => "no-operator-found",
            EngineError::Fusion(_) => "fusion-error",
            EngineError::Reasoning(e) => match e {
                ReasoningError::InvalidRequest(_) => "invalid-request",
                ReasoningError::UnknownAttribute(_) => "unknown-attribute",
                ReasoningError::UnsatisfiableAttribute { .. } => "unsatisfiable-attribute",
                ReasoningError::Fusion(FusionError::NoOperatorFound(_)) => "no-operator-found",
                ReasoningError::Fusion(_) => "fusion-error",
                ReasoningError::InvalidPlan(_) => "invalid-plan",
            },
            EngineError::Discoverer(e) => match e {
                DiscovererError::Acquisition(AcquisitionError::WrapperUnavailable(_)) => {
                    "wrapper-unavailable"
                }
                DiscovererError::Acquisition(_) => "compile-failed",
                DiscovererError::Fusion(_) => "compile-failed",
                DiscovererError::Plan(_) => "invalid-plan",
                DiscovererError::NotRunning { .. } => "discoverer-not-running",
            },
            EngineError::Dissemination(e) => match e {
                DisseminationError::SchemaViolation { .. } => "schema-violation",
                DisseminationError::UnsupportedFormat(_) => "unsupported-format",
                DisseminationError::InvalidInterval(_) => "invalid-interval",
                DisseminationError::SinkUnavailable { .. } => "sink-unavailable",
                DisseminationError::UnknownSubscription(_) => "unknown-subscription",
                DisseminationError::MalformedDelivery(_) => "malformed-delivery",
            },
            EngineError::UnknownModel { .. } => "unknown-model",
            EngineError::UnknownSensor(_) => "unknown-sensor",
            EngineError::UnknownListing(_) => "unknown-listing",
            EngineError::Io { .. } => "io",
        }
    }

    /// Process exit status: 1 for documents or configuration that fail
    /// validation, 2 for failures while setting up or running a subscription.
    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "unsatisfiable-attribute"
            | "no-operator-found"
            | "wrapper-unavailable"
            | "compile-failed"
            | "sensor-fault"
            | "sink-unavailable"
            | "discoverer-not-running"
            | "fusion-error"
            | "io" => 2,
            _ => 1,
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, EngineError> {
    fs::read(path).map_err(|e| io_error(path, e))
}

/// A scripted availability change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEvent {
    /// Offset from the scenario start.
    pub at_ms: u64,
    pub sensor_id: String,
    pub availability: Availability,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    sdd_directory: PathBuf,
    cloud_sdd_directory: Option<PathBuf>,
    fleet_file: PathBuf,
    #[serde(default)]
    domain_files: Vec<PathBuf>,
    #[serde(default)]
    requests: Vec<PathBuf>,
    #[serde(default)]
    run_for_ms: u64,
    #[serde(default)]
    clock_mode: ClockMode,
    #[serde(default)]
    start_time_ms: u64,
    #[serde(default)]
    events: Vec<ScenarioEvent>,
}

/// A scenario: where the fixtures live and what to run. Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub sdd_directory: PathBuf,
    /// Second lookup tier, consulted after `sdd_directory`.
    pub cloud_sdd_directory: Option<PathBuf>,
    pub fleet_file: PathBuf,
    pub domain_files: Vec<PathBuf>,
    pub requests: Vec<PathBuf>,
    pub run_for_ms: u64,
    pub clock_mode: ClockMode,
    pub start_time_ms: u64,
    pub events: Vec<ScenarioEvent>,
}

impl ScenarioConfig {
    /// Reads a config and checks that every referenced file exists and
    /// every request document validates.
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let bytes = read_file(path)?;
        let format = doc_format(path, &bytes);
        let raw: RawConfig =
            crate::document::parse(&bytes, format).map_err(|message| EngineError::Config {
                path: path.to_path_buf(),
                message,
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let config = ScenarioConfig {
            sdd_directory: base.join(raw.sdd_directory),
            cloud_sdd_directory: raw.cloud_sdd_directory.map(|p| base.join(p)),
            fleet_file: base.join(raw.fleet_file),
            domain_files: raw.domain_files.into_iter().map(|p| base.join(p)).collect(),
            requests: raw.requests.into_iter().map(|p| base.join(p)).collect(),
            run_for_ms: raw.run_for_ms,
            clock_mode: raw.clock_mode,
            start_time_ms: raw.start_time_ms,
            events: raw.events,
        };
        config.check(path)?;
        Ok(config)
    }

    fn check(&self, config_path: &Path) -> Result<(), EngineError> {
        let missing = |field: &str, p: &Path| EngineError::Config {
            path: config_path.to_path_buf(),
            message: format!("{field}: {} does not exist", p.display()),
        };
        if !self.sdd_directory.is_dir() {
            return Err(missing("sdd_directory", &self.sdd_directory));
        }
        if let Some(cloud) = &self.cloud_sdd_directory {
            if !cloud.is_dir() {
                return Err(missing("cloud_sdd_directory", cloud));
            }
        }
        if !self.fleet_file.is_file() {
            return Err(missing("fleet_file", &self.fleet_file));
        }
        for p in &self.domain_files {
            if !p.is_file() {
                return Err(missing("domain_files", p));
            }
        }
        for p in &self.requests {
            if !p.is_file() {
                return Err(missing("requests", p));
            }
            let bytes = read_file(p)?;
            dissemination::validate_request(&bytes, doc_format(p, &bytes), "check")
                .map_err(|e| EngineError::from(e).in_file(p))?;
        }
        Ok(())
    }
}

fn doc_format(path: &Path, bytes: &[u8]) -> DocFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("toml") => DocFormat::from_path(path),
        _ => DocFormat::sniff(bytes),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlanSummary {
    pub sources: usize,
    pub derived: usize,
}

impl PlanSummary {
    pub fn of(plan: &PlanSpec) -> Self {
        Self {
            sources: plan.sources().count(),
            derived: plan.derives().count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubmitReceipt {
    pub subscription_id: String,
    pub request_id: String,
    pub plan_id: String,
    /// True when an existing discoverer was reused.
    pub reused: bool,
    pub plan_summary: PlanSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Listing {
    Sensors,
    Attributes,
    Plans,
    Operators,
    Subscriptions,
}

impl std::str::FromStr for Listing {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "sensors" => Listing::Sensors,
            "attributes" => Listing::Attributes,
            "plans" => Listing::Plans,
            "operators" => Listing::Operators,
            "subscriptions" => Listing::Subscriptions,
            other => return Err(EngineError::UnknownListing(other.to_string())),
        })
    }
}

struct ActiveSubscription {
    subscription_id: String,
    canonical_key: String,
    plan_id: String,
    reused: bool,
    dispatcher: SubscriptionDispatcher,
    closed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    /// Base directory for relative `append-file` targets.
    pub out_dir: Option<PathBuf>,
    /// Overrides the config's clock mode.
    pub clock_mode: Option<ClockMode>,
}

/// A booted engine. All methods take `&self`; share it behind an `Arc`.
pub struct Engine {
    clock: Arc<dyn Clock>,
    simulated: Option<SimulatedClock>,
    started_at: Timestamp,
    knowledge: KnowledgeBase,
    registry: Registry,
    fusion: FusionRepository,
    acquisition: Acquisition,
    discoverers: DiscovererRepository,
    subscriptions: SubscriptionStore,
    active: Mutex<Vec<ActiveSubscription>>,
    streams: Mutex<BTreeMap<String, MemorySink>>,
    plans: Mutex<BTreeMap<String, PlanSpec>>,
    events: Mutex<Vec<(Timestamp, ScenarioEvent)>>,
    submit_lock: Mutex<()>,
    request_seq: AtomicU64,
    out_dir: Option<PathBuf>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("now", &self.clock.now_ms())
            .field("sensors", &self.registry.len())
            .field("domains", &self.knowledge.domain_count())
            .finish()
    }
}

impl Engine {
    /// Loads SDDs, registers the fleet and installs domains.
    pub fn boot(config: &ScenarioConfig, options: EngineOptions) -> Result<Self, EngineError> {
        let mode = options.clock_mode.unwrap_or(config.clock_mode);
        let (clock, simulated): (Arc<dyn Clock>, Option<SimulatedClock>) = match mode {
            ClockMode::Simulated => {
                let sim = SimulatedClock::starting_at(config.start_time_ms);
                (Arc::new(sim.clone()), Some(sim))
            }
            ClockMode::Real => (Arc::new(SystemClock), None),
        };
        let now = clock.now_ms();

        let mut tiers = vec![config.sdd_directory.clone()];
        tiers.extend(config.cloud_sdd_directory.clone());
        let sdds = SddRepository::with_tiers(tiers);
        sdds.load_all()?;

        let knowledge = KnowledgeBase::new();
        for path in &config.domain_files {
            let bytes = read_file(path)?;
            knowledge
                .load_document(&bytes, doc_format(path, &bytes))
                .map_err(|e| EngineError::from(e).in_file(path))?;
        }

        let registry = Registry::new();
        let fleet_bytes = read_file(&config.fleet_file)?;
        let fleet =
            registry::load_fleet(&fleet_bytes, doc_format(&config.fleet_file, &fleet_bytes))
                .map_err(|e| EngineError::from(e).in_file(&config.fleet_file))?;
        for entry in fleet {
            let sdd = sdds
                .get(&entry.model_id)?
                .ok_or_else(|| EngineError::UnknownModel {
                    sensor_id: entry.sensor_id.clone(),
                    model_id: entry.model_id.clone(),
                })?;
            for attr in &sdd.provided_attributes {
                if let Some(known) = knowledge.attribute(&attr.name) {
                    if known.kind != attr.kind {
                        return Err(EngineError::from(KnowledgeError::KindConflict {
                            attribute: attr.name.clone(),
                            existing: known.kind,
                            found: attr.kind,
                        })
                        .in_file(&config.fleet_file));
                    }
                }
            }
            registry
                .register_provider(entry.into_descriptor(sdd.provided_attributes.clone()), now)
                .map_err(|e| EngineError::from(e).in_file(&config.fleet_file))?;
        }

        let mut events = Vec::new();
        for ev in &config.events {
            if registry.by_sensor_id(&ev.sensor_id).is_none() {
                return Err(EngineError::UnknownSensor(ev.sensor_id.clone()));
            }
            events.push((config.start_time_ms + ev.at_ms, ev.clone()));
        }
        events.sort_by_key(|(t, _)| *t);

        tracing::info!(
            sensors = registry.len(),
            domains = knowledge.domain_count(),
            "engine booted"
        );
        Ok(Engine {
            clock,
            simulated,
            started_at: now,
            knowledge,
            registry,
            fusion: FusionRepository::with_builtins(),
            acquisition: Acquisition::new(sdds),
            discoverers: DiscovererRepository::new(),
            subscriptions: SubscriptionStore::new(),
            active: Mutex::new(Vec::new()),
            streams: Mutex::new(BTreeMap::new()),
            plans: Mutex::new(BTreeMap::new()),
            events: Mutex::new(events),
            submit_lock: Mutex::new(()),
            request_seq: AtomicU64::new(0),
            out_dir: options.out_dir,
        })
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now_ms()
    }

    pub fn clock_mode(&self) -> ClockMode {
        if self.simulated.is_some() {
            ClockMode::Simulated
        } else {
            ClockMode::Real
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.knowledge
    }

    pub fn fusion(&self) -> &FusionRepository {
        &self.fusion
    }

    pub fn acquisition(&self) -> &Acquisition {
        &self.acquisition
    }

    pub fn discoverers(&self) -> &DiscovererRepository {
        &self.discoverers
    }

    pub fn subscriptions(&self) -> &SubscriptionStore {
        &self.subscriptions
    }

    /// Validates, plans and subscribes one request document. Identical
    /// requests share a discoverer.
    pub fn submit(&self, document: &[u8], format: DocFormat) -> Result<SubmitReceipt, EngineError> {
        let seq = self.request_seq.fetch_add(1, Ordering::SeqCst) + 1;
        let (request, draft) =
            dissemination::validate_request(document, format, &format!("req-{seq}"))?;
        let plan = reasoning::build_plan(&request, &self.registry, &self.knowledge, &self.fusion)?;
        let sink = self.open_sink(&draft.sink)?;

        let _guard = self.submit_lock.lock().expect("submit lock poisoned");
        let now = self.now();
        let (shared, reused) = match self
            .discoverers
            .lookup_or_register(&plan.canonical_key, now)
        {
            Some(shared) => (shared, true),
            None => {
                let compiled =
                    discoverer::compile(&plan, &self.acquisition, &self.fusion, &self.registry)?;
                (self.discoverers.register(compiled, now), false)
            }
        };
        let (plan_id, summary) = {
            let d = shared.lock().expect("discoverer poisoned");
            (d.plan_id().to_string(), PlanSummary::of(d.plan()))
        };
        self.plans
            .lock()
            .expect("plans poisoned")
            .entry(plan_id.clone())
            .or_insert(plan.clone());

        let request_id = draft.request_id.clone();
        let subscription_id = self
            .subscriptions
            .subscribe(draft, &plan.canonical_key, now);
        let subscription = self
            .subscriptions
            .get(&subscription_id, now)
            .expect("just subscribed");
        let sink: Box<dyn Sink> = match sink {
            OpenedSink::File(f) => Box::new(f),
            OpenedSink::Stream(m) => {
                self.streams
                    .lock()
                    .expect("streams poisoned")
                    .insert(subscription_id.clone(), m.clone());
                Box::new(m)
            }
        };
        self.active
            .lock()
            .expect("active poisoned")
            .push(ActiveSubscription {
                subscription_id: subscription_id.clone(),
                canonical_key: plan.canonical_key.clone(),
                plan_id: plan_id.clone(),
                reused,
                dispatcher: SubscriptionDispatcher::new(&subscription, sink),
                closed: false,
            });
        tracing::info!(%subscription_id, %plan_id, reused, "subscribed");
        Ok(SubmitReceipt {
            subscription_id,
            request_id,
            plan_id,
            reused,
            plan_summary: summary,
        })
    }

    fn open_sink(&self, spec: &dissemination::SinkSpec) -> Result<OpenedSink, EngineError> {
        Ok(match spec.kind {
            SinkKind::StreamEndpoint => OpenedSink::Stream(MemorySink::new()),
            SinkKind::AppendFile => {
                OpenedSink::File(AppendFileSink::new(self.sink_path(&spec.target)))
            }
        })
    }

    fn sink_path(&self, target: &str) -> PathBuf {
        let p = PathBuf::from(target);
        match &self.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        }
    }

    /// Bytes delivered so far to a `stream-endpoint` subscription.
    pub fn stream_contents(&self, subscription_id: &str) -> Option<Vec<u8>> {
        self.streams
            .lock()
            .expect("streams poisoned")
            .get(subscription_id)
            .map(MemorySink::contents)
    }

    /// Read-only listing with stable field order.
    pub fn inspect(&self, listing: Listing) -> serde_json::Value {
        match listing {
            Listing::Sensors => serde_json::Value::Array(
                self.registry
                    .entries()
                    .into_iter()
                    .map(|e| {
                        json!({
                            "sensor_id": e.descriptor.sensor_id,
                            "provider_id": e.provider_id.to_string(),
                            "model_id": e.descriptor.model_id,
                            "location": e.descriptor.location,
                            "availability": e.descriptor.availability,
                            "cost_rank": e.descriptor.cost_rank,
                            "attributes": e.descriptor.provided_attributes.iter().map(|a| a.name.clone()).collect::<Vec<_>>(),
                        })
                    })
                    .collect(),
            ),
            Listing::Attributes => {
                serde_json::to_value(registry::capturable_attributes(&self.registry, &self.knowledge))
                    .expect("catalog serializes")
            }
            Listing::Plans => {
                let plans = self.plans.lock().expect("plans poisoned");
                serde_json::Value::Array(
                    self.discoverers
                        .summaries()
                        .into_iter()
                        .filter(|s| plans.contains_key(&s.plan_id))
                        .map(|s| serde_json::to_value(s).expect("summary serializes"))
                        .collect(),
                )
            }
            Listing::Operators => serde_json::to_value(self.fusion.descriptors()).expect("descriptors serialize"),
            Listing::Subscriptions => {
                let now = self.now();
                let active = self.active.lock().expect("active poisoned");
                serde_json::Value::Array(
                    self.subscriptions
                        .list()
                        .into_iter()
                        .map(|s| {
                            let runtime = active.iter().find(|a| a.subscription_id == s.subscription_id);
                            let status = self
                                .subscriptions
                                .get(&s.subscription_id, now)
                                .map_or(s.status, |s| s.status);
                            json!({
                                "subscription_id": s.subscription_id,
                                "request_id": s.request_id,
                                "user_id": s.user_id,
                                "plan_id": runtime.map(|r| r.plan_id.clone()),
                                "output_format": s.output_format,
                                "delivery_interval_ms": s.delivery_interval_ms,
                                "sink": s.sink,
                                "created_at": s.created_at,
                                "expires_at": s.expires_at,
                                "status": status,
                                "delivered": runtime.map_or(0, |r| r.dispatcher.delivered()),
                            })
                        })
                        .collect(),
                )
            }
        }
    }

    /// Earliest pending discoverer tick or scripted event.
    fn next_wakeup(&self) -> Option<Timestamp> {
        let tick = self
            .discoverers
            .all()
            .into_iter()
            .filter_map(|(_, d)| d.lock().expect("discoverer poisoned").next_tick_at())
            .min();
        let event = self
            .events
            .lock()
            .expect("events poisoned")
            .first()
            .map(|(t, _)| *t);
        match (tick, event) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Applies due events, ticks due discoverers and dispatches their records,
    /// all at the current clock time.
    pub fn step(&self) {
        let now = self.now();
        {
            let mut events = self.events.lock().expect("events poisoned");
            let due = events.iter().take_while(|(t, _)| *t <= now).count();
            for (_, ev) in events.drain(..due) {
                if let Some(entry) = self.registry.by_sensor_id(&ev.sensor_id) {
                    tracing::info!(sensor_id = %ev.sensor_id, availability = ?ev.availability, "availability change");
                    let _ = self
                        .registry
                        .set_availability(entry.provider_id, ev.availability);
                }
            }
        }

        let mut records = Vec::new();
        for (key, shared) in self.discoverers.all() {
            let mut d = shared.lock().expect("discoverer poisoned");
            if d.next_tick_at().is_some_and(|t| t <= now) {
                match d.tick(self.clock.as_ref()) {
                    Ok(r) => records.push((key, r)),
                    Err(e) => tracing::warn!(plan_id = %d.plan_id(), error = %e, "tick failed"),
                }
            }
        }

        let mut active = self.active.lock().expect("active poisoned");
        for sub in active.iter_mut().filter(|s| !s.closed) {
            if sub.dispatcher.is_expired_at(now) {
                sub.closed = true;
                let _ = self
                    .subscriptions
                    .set_status(&sub.subscription_id, SubscriptionStatus::Expired);
                self.discoverers.unsubscribe(&sub.canonical_key);
                tracing::info!(subscription_id = %sub.subscription_id, "subscription expired");
                continue;
            }
            match records.iter().find(|(k, _)| *k == sub.canonical_key) {
                Some((_, r)) => {
                    sub.dispatcher.offer(r.clone(), now);
                }
                None => {
                    sub.dispatcher.poll(now);
                }
            }
            let status = if sub.dispatcher.stats().is_degraded() {
                SubscriptionStatus::Degraded
            } else {
                SubscriptionStatus::Active
            };
            let _ = self.subscriptions.set_status(&sub.subscription_id, status);
        }
    }

    /// Simulated mode: processes every tick and event strictly before `end`,
    /// then leaves the clock at `end`. Real mode: steps until the wall clock
    /// reaches `end`.
    pub fn advance_until(&self, end: Timestamp) {
        match &self.simulated {
            Some(sim) => {
                while let Some(t) = self.next_wakeup().filter(|t| *t < end) {
                    sim.set(t);
                    self.step();
                }
                sim.set(end);
            }
            None => {
                while self.now() < end {
                    self.step();
                    let wait = self
                        .next_wakeup()
                        .unwrap_or(end)
                        .min(end)
                        .saturating_sub(self.now())
                        .clamp(1, 50);
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }

    pub fn run_for(&self, duration_ms: u64) {
        self.advance_until(self.now() + duration_ms);
    }

    /// Stops all pipelines and waits for queued deliveries to be written.
    pub fn shutdown(&self) -> RunReport {
        let now = self.now();
        let mut active = self.active.lock().expect("active poisoned");
        let mut subscriptions = Vec::new();
        for sub in active.iter_mut() {
            if !sub.closed {
                sub.closed = true;
                self.discoverers.unsubscribe(&sub.canonical_key);
            }
            sub.dispatcher.close();
            let record = self
                .subscriptions
                .get(&sub.subscription_id, now)
                .expect("active subscription is stored");
            let stats = sub.dispatcher.stats();
            let status = if stats.is_degraded() || stats.pending() > 0 {
                SubscriptionStatus::Degraded
            } else {
                record.status
            };
            subscriptions.push(SubscriptionReport {
                subscription_id: sub.subscription_id.clone(),
                request_id: record.request_id,
                user_id: record.user_id,
                plan_id: sub.plan_id.clone(),
                reused: sub.reused,
                output_format: record.output_format.as_str().to_string(),
                delivery_interval_ms: record.delivery_interval_ms,
                sink_target: record.sink.target,
                delivered: sub.dispatcher.delivered(),
                written: stats.written(),
                failed_writes: stats.failed_writes(),
                status,
                samples: sub.dispatcher.samples().to_vec(),
            });
        }
        for (_, d) in self.discoverers.all() {
            d.lock().expect("discoverer poisoned").stop();
        }
        RunReport {
            clock_mode: self.clock_mode(),
            started_at: self.started_at,
            ended_at: now,
            sensors: self.registry.len(),
            domains: self.knowledge.domain_count(),
            plans: self
                .plans
                .lock()
                .expect("plans poisoned")
                .keys()
                .cloned()
                .collect(),
            subscriptions,
            failed_submissions: Vec::new(),
            exit_code: 0,
        }
    }

    /// Plans built so far, by plan id.
    pub fn plans(&self) -> BTreeMap<String, PlanSpec> {
        self.plans.lock().expect("plans poisoned").clone()
    }

    pub fn discoverer_state(&self, canonical_key: &str) -> Option<DiscovererState> {
        self.discoverers
            .get(canonical_key)
            .map(|d| d.lock().expect("discoverer poisoned").state())
    }
}

enum OpenedSink {
    File(AppendFileSink),
    Stream(MemorySink),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubscriptionReport {
    pub subscription_id: String,
    pub request_id: String,
    pub user_id: String,
    pub plan_id: String,
    pub reused: bool,
    pub output_format: String,
    pub delivery_interval_ms: u64,
    pub sink_target: String,
    pub delivered: u64,
    pub written: u64,
    pub failed_writes: u64,
    pub status: SubscriptionStatus,
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedSubmission {
    pub request: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub clock_mode: ClockMode,
    pub started_at: Timestamp,
    pub ended_at: Timestamp,
    pub sensors: usize,
    pub domains: usize,
    pub plans: Vec<String>,
    pub subscriptions: Vec<SubscriptionReport>,
    pub failed_submissions: Vec<FailedSubmission>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub run_for_ms: Option<u64>,
    pub clock_mode: Option<ClockMode>,
}

/// Boots the scenario, submits its requests, runs it and writes
/// `plans/<plan-id>.json`, `report.json` and the delivery files under
/// `out_dir`. Delivery files from an earlier run into the same directory are
/// replaced.
pub fn run_scenario(
    config: &ScenarioConfig,
    options: &RunOptions,
) -> Result<RunReport, EngineError> {
    let out = &options.out_dir;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let engine = Engine::boot(
        config,
        EngineOptions {
            out_dir: Some(out.clone()),
            clock_mode: options.clock_mode,
        },
    )?;

    let mut failed = Vec::new();
    let mut exit_code = 0;
    for path in &config.requests {
        let bytes = read_file(path)?;
        let format = doc_format(path, &bytes);
        if let Ok((_, draft)) = dissemination::validate_request(&bytes, format, "") {
            if draft.sink.kind == SinkKind::AppendFile {
                let target = engine.sink_path(&draft.sink.target);
                if target.starts_with(out) && target.is_file() {
                    fs::remove_file(&target).map_err(|e| io_error(&target, e))?;
                }
            }
        }
        match engine.submit(&bytes, format) {
            Ok(receipt) => {
                tracing::info!(request = %path.display(), plan_id = %receipt.plan_id, "submitted")
            }
            Err(e) => {
                tracing::error!(request = %path.display(), code = e.code(), error = %e, "submission failed");
                exit_code = exit_code.max(e.exit_code());
                failed.push(FailedSubmission {
                    request: path.display().to_string(),
                    code: e.code().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }

    let run_for = options.run_for_ms.unwrap_or(config.run_for_ms);
    engine.run_for(run_for);
    let mut report = engine.shutdown();

    let plans_dir = out.join("plans");
    fs::create_dir_all(&plans_dir).map_err(|e| io_error(&plans_dir, e))?;
    for (id, plan) in engine.plans() {
        let p = plans_dir.join(format!("{id}.json"));
        fs::write(&p, plan.dump()).map_err(|e| io_error(&p, e))?;
    }
    let streams = engine.streams.lock().expect("streams poisoned").clone();
    if !streams.is_empty() {
        let dir = out.join("streams");
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        for (id, sink) in streams {
            let ext = report
                .subscriptions
                .iter()
                .find(|s| s.subscription_id == id)
                .map_or("out", |s| {
                    if s.output_format == "csv" {
                        "csv"
                    } else {
                        "jsonl"
                    }
                });
            let p = dir.join(format!("{id}.{ext}"));
            fs::write(&p, sink.contents()).map_err(|e| io_error(&p, e))?;
        }
    }

    if report
        .subscriptions
        .iter()
        .any(|s| s.status == SubscriptionStatus::Degraded)
    {
        exit_code = exit_code.max(2);
    }
    report.failed_submissions = failed;
    report.exit_code = exit_code;
    let p = out.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(&p, text).map_err(|e| io_error(&p, e))?;
    Ok(report)
}

/// Kinds of document the `validate` command understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Sdd,
    Domain,
    Request,
    Fleet,
    Scenario,
}

impl std::str::FromStr for ArtifactKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "sdd" => ArtifactKind::Sdd,
            "domain" => ArtifactKind::Domain,
            "request" => ArtifactKind::Request,
            "fleet" => ArtifactKind::Fleet,
            "scenario" => ArtifactKind::Scenario,
            other => return Err(format!("unknown document kind `{other}`")),
        })
    }
}

fn detect_kind(bytes: &[u8], format: DocFormat) -> Option<ArtifactKind> {
    let doc: serde_json::Map<String, serde_json::Value> =
        crate::document::parse(bytes, format).ok()?;
    let has = |k: &str| doc.contains_key(k);
    if has("model_id") {
        Some(ArtifactKind::Sdd)
    } else if has("domain_id") {
        Some(ArtifactKind::Domain)
    } else if has("request") || has("user") {
        Some(ArtifactKind::Request)
    } else if has("fleet_file") {
        Some(ArtifactKind::Scenario)
    } else if has("sensors") {
        Some(ArtifactKind::Fleet)
    } else {
        None
    }
}

/// Validates one document offline. The kind is detected from its top-level
/// keys unless given.
pub fn validate_artifact(
    path: &Path,
    kind: Option<ArtifactKind>,
) -> Result<ArtifactKind, EngineError> {
    let bytes = read_file(path)?;
    let format = doc_format(path, &bytes);
    let kind = match kind.or_else(|| detect_kind(&bytes, format)) {
        Some(k) => k,
        None => {
            return Err(EngineError::Config {
                path: path.to_path_buf(),
                message: "cannot tell what kind of document this is".into(),
            })
        }
    };
    let result = match kind {
        ArtifactKind::Sdd => crate::acquisition::load_sdd_file(path)
            .map(|_| ())
            .map_err(EngineError::from),
        ArtifactKind::Domain => knowledge::load_domain(&bytes, format)
            .map(|_| ())
            .map_err(EngineError::from),
        ArtifactKind::Request => dissemination::validate_request(&bytes, format, "validate")
            .map(|_| ())
            .map_err(EngineError::from),
        ArtifactKind::Fleet => registry::load_fleet(&bytes, format)
            .map_err(EngineError::from)
            .and_then(|entries| {
                entries
                    .into_iter()
                    .try_for_each(|e| e.into_descriptor(Vec::new()).validate())
                    .map_err(EngineError::from)
            }),
        ArtifactKind::Scenario => return ScenarioConfig::load(path).map(|_| kind),
    };
    result.map_err(|e| e.in_file(path))?;
    Ok(kind)
}

/// Convenience for tests and tools: boot from a config path in simulated mode.
pub fn boot_simulated(config_path: &Path, out_dir: Option<PathBuf>) -> Result<Engine, EngineError> {
    let config = ScenarioConfig::load(config_path)?;
    Engine::boot(
        &config,
        EngineOptions {
            out_dir,
            clock_mode: Some(ClockMode::Simulated),
        },
    )
}
