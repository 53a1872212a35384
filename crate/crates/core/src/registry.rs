//! Context provider registry (which sensors exist, what they provide, whether
//! they are online) and the catalog of capturable context attributes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::document::{self, DocFormat};
use crate::knowledge::KnowledgeBase;
use crate::value::{AttributeName, ContextAttribute};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("sensor `{0}` is already registered")]
    DuplicateSensorId(String),
    #[error("unknown provider {0}")]
    UnknownProvider(ProviderId),
    #[error("invalid sensor descriptor `{field}`: {message}")]
    InvalidDescriptor { field: String, message: String },
    #[error("malformed fleet file: {0}")]
    MalformedFleet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProviderId(pub u64);

impl fmt::Display for ProviderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Availability {
    #[default]
    Online,
    Offline,
}

impl std::str::FromStr for Availability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "online" => Ok(Availability::Online),
            "offline" => Ok(Availability::Offline),
            other => Err(format!("unknown availability `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Location {
    pub latitude: f64,
    pub longitude: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorDescriptor {
    pub sensor_id: String,
    pub model_id: String,
    pub location: Location,
    pub availability: Availability,
    pub cost_rank: u32,
    pub provided_attributes: Vec<ContextAttribute>,
}

impl SensorDescriptor {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |field: &str, message: String| RegistryError::InvalidDescriptor {
            field: field.to_string(),
            message,
        };
        if self.sensor_id.trim().is_empty() {
            return Err(bad("sensor_id", "must be non-empty".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(bad("model_id", "must be non-empty".into()));
        }
        if !(-90.0..=90.0).contains(&self.location.latitude) {
            return Err(bad(
                "location.latitude",
                format!("{} outside [-90, 90]", self.location.latitude),
            ));
        }
        if !(-180.0..=180.0).contains(&self.location.longitude) {
            return Err(bad(
                "location.longitude",
                format!("{} outside [-180, 180]", self.location.longitude),
            ));
        }
        Ok(())
    }

    pub fn provides(&self, attribute: &str) -> bool {
        self.provided_attributes.iter().any(|a| a.name == attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderEntry {
    pub provider_id: ProviderId,
    pub descriptor: SensorDescriptor,
    pub registered_at: Timestamp,
}

/// Optional filters for [`Registry::find_providers`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProviderConstraints {
    pub location_label: Option<String>,
    pub max_cost_rank: Option<u32>,
}

impl ProviderConstraints {
    pub fn at(label: impl Into<String>) -> Self {
        Self {
            location_label: Some(label.into()),
            max_cost_rank: None,
        }
    }

    fn admits(&self, d: &SensorDescriptor) -> bool {
        self.location_label
            .as_ref()
            .is_none_or(|l| *l == d.location.label)
            && self.max_cost_rank.is_none_or(|m| d.cost_rank <= m)
    }
}

/// Shared view of one provider's availability, read by running pipelines.
#[derive(Debug, Clone)]
pub struct AvailabilityHandle(Arc<AtomicBool>);

impl AvailabilityHandle {
    pub fn is_online(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
struct Slot {
    entry: ProviderEntry,
    online: Arc<AtomicBool>,
}

#[derive(Debug, Default)]
struct Inner {
    providers: BTreeMap<ProviderId, Slot>,
    by_sensor: BTreeMap<String, ProviderId>,
}

#[derive(Debug, Default)]
pub struct Registry {
    inner: RwLock<Inner>,
    next_id: AtomicU64,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_provider(
        &self,
        descriptor: SensorDescriptor,
        registered_at: Timestamp,
    ) -> Result<ProviderEntry, RegistryError> {
        descriptor.validate()?;
        let mut inner = self.inner.write().expect("registry poisoned");
        if inner.by_sensor.contains_key(&descriptor.sensor_id) {
            return Err(RegistryError::DuplicateSensorId(descriptor.sensor_id));
        }
        let provider_id = ProviderId(self.next_id.fetch_add(1, Ordering::SeqCst) + 1);
        let online = Arc::new(AtomicBool::new(
            descriptor.availability == Availability::Online,
        ));
        let entry = ProviderEntry {
            provider_id,
            descriptor,
            registered_at,
        };
        inner
            .by_sensor
            .insert(entry.descriptor.sensor_id.clone(), provider_id);
        inner.providers.insert(
            provider_id,
            Slot {
                entry: entry.clone(),
                online,
            },
        );
        tracing::debug!(%provider_id, sensor_id = %entry.descriptor.sensor_id, "registered provider");
        Ok(entry)
    }

    pub fn deregister(&self, provider_id: ProviderId) -> Result<ProviderEntry, RegistryError> {
        let mut inner = self.inner.write().expect("registry poisoned");
        let slot = inner
            .providers
            .remove(&provider_id)
            .ok_or(RegistryError::UnknownProvider(provider_id))?;
        inner.by_sensor.remove(&slot.entry.descriptor.sensor_id);
        slot.online.store(false, Ordering::SeqCst);
        Ok(slot.entry)
    }

    /// Online providers listing `attribute` that satisfy every constraint,
    /// ordered by (cost rank, sensor id).
    pub fn find_providers(
        &self,
        attribute: &str,
        constraints: &ProviderConstraints,
    ) -> Vec<ProviderEntry> {
        let inner = self.inner.read().expect("registry poisoned");
        let mut out: Vec<ProviderEntry> = inner
            .providers
            .values()
            .map(|s| &s.entry)
            .filter(|e| {
                e.descriptor.availability == Availability::Online
                    && e.descriptor.provides(attribute)
                    && constraints.admits(&e.descriptor)
            })
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            (a.descriptor.cost_rank, &a.descriptor.sensor_id)
                .cmp(&(b.descriptor.cost_rank, &b.descriptor.sensor_id))
        });
        out
    }

    pub fn set_availability(
        &self,
        provider_id: ProviderId,
        status: Availability,
    ) -> Result<ProviderEntry, RegistryError> {
        let mut inner = self.inner.write().expect("registry poisoned");
        let slot = inner
            .providers
            .get_mut(&provider_id)
            .ok_or(RegistryError::UnknownProvider(provider_id))?;
        slot.entry.descriptor.availability = status;
        slot.online
            .store(status == Availability::Online, Ordering::SeqCst);
        Ok(slot.entry.clone())
    }

    pub fn availability_handle(&self, provider_id: ProviderId) -> Option<AvailabilityHandle> {
        let inner = self.inner.read().expect("registry poisoned");
        inner
            .providers
            .get(&provider_id)
            .map(|s| AvailabilityHandle(Arc::clone(&s.online)))
    }

    pub fn get(&self, provider_id: ProviderId) -> Option<ProviderEntry> {
        let inner = self.inner.read().expect("registry poisoned");
        inner.providers.get(&provider_id).map(|s| s.entry.clone())
    }

    pub fn by_sensor_id(&self, sensor_id: &str) -> Option<ProviderEntry> {
        let inner = self.inner.read().expect("registry poisoned");
        let id = inner.by_sensor.get(sensor_id)?;
        inner.providers.get(id).map(|s| s.entry.clone())
    }

    /// All providers ordered by sensor id.
    pub fn entries(&self) -> Vec<ProviderEntry> {
        let inner = self.inner.read().expect("registry poisoned");
        inner
            .by_sensor
            .values()
            .filter_map(|id| inner.providers.get(id))
            .map(|s| s.entry.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner
            .read()
            .expect("registry poisoned")
            .providers
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Attribute -> number of online providers listing it, with metadata from
    /// the first provider (by sensor id) that declares it.
    fn online_attribute_counts(&self) -> BTreeMap<AttributeName, (ContextAttribute, usize)> {
        let mut out: BTreeMap<AttributeName, (ContextAttribute, usize)> = BTreeMap::new();
        for e in self.entries() {
            if e.descriptor.availability != Availability::Online {
                continue;
            }
            for a in &e.descriptor.provided_attributes {
                out.entry(a.name.clone())
                    .or_insert_with(|| (a.clone(), 0))
                    .1 += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeCatalogEntry {
    pub attribute: ContextAttribute,
    pub provider_count: usize,
    pub derivable: bool,
}

/// Every attribute that can currently be obtained: directly provided by an
/// online sensor, or produced by some rule whose conditions are all
/// capturable. Computed as a least fixed point.
pub fn capturable_attributes(
    registry: &Registry,
    kb: &KnowledgeBase,
) -> Vec<AttributeCatalogEntry> {
    let provided = registry.online_attribute_counts();
    let derivations = kb.derivations();

    let mut capturable: BTreeSet<AttributeName> = provided.keys().cloned().collect();
    let mut derivable: BTreeSet<AttributeName> = BTreeSet::new();
    loop {
        let mut changed = false;
        for (attr, rules) in &derivations {
            if derivable.contains(attr) {
                continue;
            }
            if rules
                .iter()
                .any(|deps| deps.iter().all(|d| capturable.contains(d)))
            {
                derivable.insert(attr.clone());
                changed |= capturable.insert(attr.clone());
            }
        }
        if !changed {
            break;
        }
    }

    capturable
        .into_iter()
        .map(|name| {
            let (attribute, provider_count) = match provided.get(&name) {
                Some((a, n)) => (a.clone(), *n),
                None => (
                    kb.attribute(&name).unwrap_or_else(|| {
                        ContextAttribute::new(&name, "", crate::value::ValueKind::String)
                    }),
                    0,
                ),
            };
            AttributeCatalogEntry {
                derivable: derivable.contains(&name),
                attribute,
                provider_count,
            }
        })
        .collect()
}

/// One sensor as listed in a deployment fleet file. Provided attributes come
/// from the sensor's device definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetEntry {
    pub sensor_id: String,
    pub model_id: String,
    pub location: Location,
    #[serde(default)]
    pub cost_rank: u32,
    #[serde(default)]
    pub availability: Availability,
}

impl FleetEntry {
    pub fn into_descriptor(self, provided_attributes: Vec<ContextAttribute>) -> SensorDescriptor {
        SensorDescriptor {
            sensor_id: self.sensor_id,
            model_id: self.model_id,
            location: self.location,
            availability: self.availability,
            cost_rank: self.cost_rank,
            provided_attributes,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FleetFile {
    #[serde(default)]
    sensors: Vec<FleetEntry>,
}

/// Parses a fleet file (`[[sensors]]` entries).
pub fn load_fleet(document: &[u8], format: DocFormat) -> Result<Vec<FleetEntry>, RegistryError> {
    let file: FleetFile =
        document::parse(document, format).map_err(RegistryError::MalformedFleet)?;
    let mut seen = BTreeSet::new();
    for s in &file.sensors {
        if !seen.insert(s.sensor_id.as_str()) {
            return Err(RegistryError::DuplicateSensorId(s.sensor_id.clone()));
        }
    }
    Ok(file.sensors)
}
