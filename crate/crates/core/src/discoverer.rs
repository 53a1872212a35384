//! Compiled acquisition pipelines ("discoverers"), their tick loop, and the
//! repository that lets identical requests share one pipeline.
//!
//! A tick pulls from every source that is due (others keep their latest
//! reading), evaluates rule nodes in topological order, and assembles one
//! annotated [`DataRecord`]. A faulted or offline source makes its attributes
//! unknown for that tick; the record is still emitted.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::acquisition::{Acquisition, AcquisitionError, SensorWrapper};
use crate::clock::{Clock, Timestamp};
use crate::fusion::{FusionError, FusionRepository, OperatorHandle, Param, Params};
use crate::reasoning::{PlanNode, PlanSpec, ReasoningError};
use crate::registry::{AvailabilityHandle, Registry};
use crate::value::{AttributeName, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscovererError {
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Plan(#[from] ReasoningError),
    #[error("discoverer `{plan_id}` is {state}, not running")]
    NotRunning {
        plan_id: String,
        state: DiscovererState,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscovererState {
    Created,
    Running,
    Stopped,
}

impl fmt::Display for DiscovererState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscovererState::Created => "created",
            DiscovererState::Running => "running",
            DiscovererState::Stopped => "stopped",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Measured,
    Derived,
    Unknown,
}

impl Quality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quality::Measured => "measured",
            Quality::Derived => "derived",
            Quality::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<Quality> {
        match s {
            "measured" => Some(Quality::Measured),
            "derived" => Some(Quality::Derived),
            "unknown" => Some(Quality::Unknown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotations {
    /// Sensor id -> location label, present when the plan is annotated.
    pub geographical_location: Option<BTreeMap<String, String>>,
    pub source_sensor_ids: Vec<String>,
    pub quality: BTreeMap<AttributeName, Quality>,
}

/// One fused, timestamped record.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRecord {
    pub timestamp: Timestamp,
    pub values: BTreeMap<AttributeName, Value>,
    pub annotations: Annotations,
}

struct SourceRuntime {
    node_id: String,
    sensor_id: String,
    location_label: String,
    attributes: Vec<AttributeName>,
    wrapper: SensorWrapper,
    availability: AvailabilityHandle,
    last_pull_at: Option<Timestamp>,
    latest: Option<BTreeMap<AttributeName, Value>>,
}

impl SourceRuntime {
    fn refresh(&mut self, clock: &dyn Clock) {
        let now = clock.now_ms();
        if !self.availability.is_online() {
            self.latest = None;
            self.last_pull_at = None;
            return;
        }
        let due = self
            .last_pull_at
            .is_none_or(|t| now.saturating_sub(t) >= self.wrapper.sampling_interval_ms());
        if !due {
            return;
        }
        match self.wrapper.pull(clock) {
            Ok(reading) => {
                self.latest = Some(reading.values);
                self.last_pull_at = Some(reading.timestamp);
            }
            Err(e) => {
                tracing::warn!(sensor_id = %self.sensor_id, error = %e, "source read failed");
                self.latest = None;
                self.last_pull_at = None;
            }
        }
    }
}

struct DeriveRuntime {
    node_id: String,
    attribute: AttributeName,
    operator: OperatorHandle,
    params: Params,
    inputs: Vec<AttributeName>,
}

/// A compiled, per-request streaming pipeline.
pub struct Discoverer {
    plan: Arc<PlanSpec>,
    state: DiscovererState,
    subscriber_count: usize,
    tick_interval_ms: u64,
    next_tick_at: Option<Timestamp>,
    sources: Vec<SourceRuntime>,
    derives: Vec<DeriveRuntime>,
    evaluation_order: Vec<String>,
    ticks: u64,
}

impl fmt::Debug for Discoverer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Discoverer")
            .field("plan_id", &self.plan.plan_id)
            .field("state", &self.state)
            .field("subscriber_count", &self.subscriber_count)
            .field("tick_interval_ms", &self.tick_interval_ms)
            .finish()
    }
}

/// Compiles a plan into a discoverer in the `created` state. Each source gets
/// its own wrapper instance.
pub fn compile(
    plan: &PlanSpec,
    acquisition: &Acquisition,
    fusion: &FusionRepository,
    registry: &Registry,
) -> Result<Discoverer, DiscovererError> {
    let evaluation_order = plan.evaluation_order()?;
    let mut sources = Vec::new();
    let mut derives = Vec::new();
    for node in &plan.nodes {
        match node {
            PlanNode::Source(s) => {
                let availability = registry
                    .availability_handle(s.provider_id)
                    .ok_or_else(|| AcquisitionError::WrapperUnavailable(s.model_id.clone()))?;
                let wrapper = acquisition.resolve(&s.model_id)?;
                sources.push(SourceRuntime {
                    node_id: s.node_id.clone(),
                    sensor_id: s.sensor_id.clone(),
                    location_label: s.location.label.clone(),
                    attributes: s.attributes.clone(),
                    wrapper,
                    availability,
                    last_pull_at: None,
                    latest: None,
                });
            }
            PlanNode::Derive(d) => {
                let operator = fusion
                    .get(&d.operator_id)
                    .ok_or_else(|| FusionError::UnknownOperator(d.operator_id.clone()))?;
                let mut params = Params::new();
                params.insert("rules".into(), Param::Rules(Arc::new(d.rules.clone())));
                params.insert("inputs".into(), Param::Names(d.inputs.clone()));
                derives.push(DeriveRuntime {
                    node_id: d.node_id.clone(),
                    attribute: d.attribute.clone(),
                    operator,
                    params,
                    inputs: d.inputs.clone(),
                });
            }
        }
    }
    let position = |id: &str| {
        evaluation_order
            .iter()
            .position(|n| n == id)
            .unwrap_or(usize::MAX)
    };
    derives.sort_by_key(|d| position(&d.node_id));

    let min_sampling = sources
        .iter()
        .map(|s| s.wrapper.sampling_interval_ms())
        .min()
        .unwrap_or(plan.delivery_interval_ms);
    Ok(Discoverer {
        plan: Arc::new(plan.clone()),
        state: DiscovererState::Created,
        subscriber_count: 0,
        tick_interval_ms: min_sampling.min(plan.delivery_interval_ms).max(1),
        next_tick_at: None,
        sources,
        derives,
        evaluation_order,
        ticks: 0,
    })
}

impl Discoverer {
    pub fn plan(&self) -> &PlanSpec {
        &self.plan
    }

    pub fn plan_id(&self) -> &str {
        &self.plan.plan_id
    }

    pub fn canonical_key(&self) -> &str {
        &self.plan.canonical_key
    }

    pub fn state(&self) -> DiscovererState {
        self.state
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscriber_count
    }

    pub fn tick_interval_ms(&self) -> u64 {
        self.tick_interval_ms
    }

    pub fn next_tick_at(&self) -> Option<Timestamp> {
        (self.state == DiscovererState::Running)
            .then_some(self.next_tick_at)
            .flatten()
    }

    /// Node ids in evaluation order.
    pub fn evaluation_order(&self) -> &[String] {
        &self.evaluation_order
    }

    pub fn tick_count(&self) -> u64 {
        self.ticks
    }

    /// Starts (or resumes) ticking; the first tick is due at `now`.
    pub fn start(&mut self, now: Timestamp) {
        if self.state != DiscovererState::Running {
            self.state = DiscovererState::Running;
            self.next_tick_at = Some(now);
        }
    }

    /// Stops ticking and drops cached readings. Idempotent.
    pub fn stop(&mut self) {
        if self.state == DiscovererState::Stopped {
            return;
        }
        self.state = DiscovererState::Stopped;
        self.next_tick_at = None;
        for s in &mut self.sources {
            s.latest = None;
            s.last_pull_at = None;
        }
        tracing::debug!(plan_id = %self.plan.plan_id, "discoverer stopped");
    }

    pub fn tick(&mut self, clock: &dyn Clock) -> Result<DataRecord, DiscovererError> {
        if self.state != DiscovererState::Running {
            return Err(DiscovererError::NotRunning {
                plan_id: self.plan.plan_id.clone(),
                state: self.state,
            });
        }
        let now = clock.now_ms();
        let mut values: BTreeMap<AttributeName, Value> = BTreeMap::new();
        let mut quality: BTreeMap<AttributeName, Quality> = BTreeMap::new();
        for s in &mut self.sources {
            s.refresh(clock);
            for a in &s.attributes {
                let v = s
                    .latest
                    .as_ref()
                    .and_then(|m| m.get(a).cloned())
                    .unwrap_or(Value::Unknown);
                quality.insert(
                    a.clone(),
                    if v.is_unknown() {
                        Quality::Unknown
                    } else {
                        Quality::Measured
                    },
                );
                values.insert(a.clone(), v);
            }
        }
        for d in &self.derives {
            let inputs: Vec<Value> = d
                .inputs
                .iter()
                .map(|i| values.get(i).cloned().unwrap_or(Value::Unknown))
                .collect();
            let v = d.operator.apply(&inputs, &d.params).unwrap_or_else(|e| {
                tracing::warn!(node = %d.node_id, error = %e, "fusion operator failed");
                Value::Unknown
            });
            quality.insert(
                d.attribute.clone(),
                if v.is_unknown() {
                    Quality::Unknown
                } else {
                    Quality::Derived
                },
            );
            values.insert(d.attribute.clone(), v);
        }

        let outputs = &self.plan.outputs;
        let record = DataRecord {
            timestamp: now,
            values: outputs
                .iter()
                .map(|a| (a.clone(), values.get(a).cloned().unwrap_or(Value::Unknown)))
                .collect(),
            annotations: Annotations {
                geographical_location: self.plan.include_annotations.then(|| {
                    self.sources
                        .iter()
                        .map(|s| (s.sensor_id.clone(), s.location_label.clone()))
                        .collect()
                }),
                source_sensor_ids: self.sources.iter().map(|s| s.sensor_id.clone()).collect(),
                quality: outputs
                    .iter()
                    .map(|a| {
                        (
                            a.clone(),
                            quality.get(a).copied().unwrap_or(Quality::Unknown),
                        )
                    })
                    .collect(),
            },
        };
        self.ticks += 1;
        self.next_tick_at = Some(now + self.tick_interval_ms);
        Ok(record)
    }

    /// Source node ids, in plan order.
    pub fn source_node_ids(&self) -> Vec<&str> {
        self.sources.iter().map(|s| s.node_id.as_str()).collect()
    }
}

pub type SharedDiscoverer = Arc<Mutex<Discoverer>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscovererSummary {
    pub plan_id: String,
    pub canonical_key: String,
    pub state: DiscovererState,
    pub subscriber_count: usize,
    pub tick_interval_ms: u64,
    pub ticks: u64,
    pub sources: usize,
    pub derived: usize,
}

/// Discoverers keyed by canonical request key. Reuse is exact-key only.
#[derive(Debug, Default)]
pub struct DiscovererRepository {
    entries: RwLock<BTreeMap<String, SharedDiscoverer>>,
    registrations: AtomicUsize,
}

impl DiscovererRepository {
    pub fn new() -> Self {
        Self::default()
    }

    /// On a hit the subscriber count is incremented (and a stopped discoverer
    /// is resumed at `now`).
    pub fn lookup_or_register(&self, key: &str, now: Timestamp) -> Option<SharedDiscoverer> {
        let shared = self
            .entries
            .read()
            .expect("discoverer repository poisoned")
            .get(key)
            .cloned()?;
        {
            let mut d = shared.lock().expect("discoverer poisoned");
            d.subscriber_count += 1;
            d.start(now);
        }
        Some(shared)
    }

    /// Inserts a freshly compiled discoverer with one subscriber and starts it.
    /// If the key is already present the existing entry gains a subscriber
    /// instead.
    pub fn register(&self, mut discoverer: Discoverer, now: Timestamp) -> SharedDiscoverer {
        let key = discoverer.canonical_key().to_string();
        let mut entries = self
            .entries
            .write()
            .expect("discoverer repository poisoned");
        if let Some(existing) = entries.get(&key) {
            let mut d = existing.lock().expect("discoverer poisoned");
            d.subscriber_count += 1;
            d.start(now);
            return Arc::clone(existing);
        }
        discoverer.subscriber_count = 1;
        discoverer.start(now);
        let shared = Arc::new(Mutex::new(discoverer));
        entries.insert(key, Arc::clone(&shared));
        self.registrations.fetch_add(1, Ordering::SeqCst);
        shared
    }

    /// Drops one subscriber; the discoverer stops when none remain. The entry
    /// stays in the repository for later reuse.
    pub fn unsubscribe(&self, key: &str) -> Option<DiscovererState> {
        let shared = self.get(key)?;
        let mut d = shared.lock().expect("discoverer poisoned");
        d.subscriber_count = d.subscriber_count.saturating_sub(1);
        if d.subscriber_count == 0 {
            d.stop();
        }
        Some(d.state)
    }

    pub fn get(&self, key: &str) -> Option<SharedDiscoverer> {
        self.entries
            .read()
            .expect("discoverer repository poisoned")
            .get(key)
            .cloned()
    }

    /// How many discoverers have been registered (i.e. compiled and kept).
    pub fn registration_count(&self) -> usize {
        self.registrations.load(Ordering::SeqCst)
    }

    /// Entries ordered by canonical key.
    pub fn all(&self) -> Vec<(String, SharedDiscoverer)> {
        self.entries
            .read()
            .expect("discoverer repository poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), Arc::clone(v)))
            .collect()
    }

    pub fn summaries(&self) -> Vec<DiscovererSummary> {
        self.all()
            .into_iter()
            .map(|(key, d)| {
                let d = d.lock().expect("discoverer poisoned");
                DiscovererSummary {
                    plan_id: d.plan_id().to_string(),
                    canonical_key: key,
                    state: d.state,
                    subscriber_count: d.subscriber_count,
                    tick_interval_ms: d.tick_interval_ms,
                    ticks: d.ticks,
                    sources: d.sources.len(),
                    derived: d.derives.len(),
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries
            .read()
            .expect("discoverer repository poisoned")
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
