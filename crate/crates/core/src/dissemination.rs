//! Request intake, subscription bookkeeping, record formatting and delivery.
//!
//! Each subscription owns a [`SubscriptionDispatcher`] that downsamples the
//! discoverer's records (newest wins) to the subscriber's interval and hands
//! formatted bytes to a dedicated sink worker thread, so a slow or failing
//! sink only ever delays its own subscription.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::discoverer::{DataRecord, Quality};
use crate::document::{self, DocFormat};
use crate::reasoning::{OutputFormat, Request};
use crate::value::{AttributeName, Value, ValueKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisseminationError {
    #[error("schema violation at `{field}`: {message}")]
    SchemaViolation { field: String, message: String },
    #[error("unsupported output format `{0}`")]
    UnsupportedFormat(String),
    #[error("invalid interval: {0}")]
    InvalidInterval(String),
    #[error("sink unavailable for {subscription_id}: {message}")]
    SinkUnavailable {
        subscription_id: String,
        message: String,
    },
    #[error("unknown subscription `{0}`")]
    UnknownSubscription(String),
    #[error("malformed delivery: {0}")]
    MalformedDelivery(String),
}

fn schema(field: &str, message: impl Into<String>) -> DisseminationError {
    DisseminationError::SchemaViolation {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinkKind {
    StreamEndpoint,
    AppendFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SinkSpec {
    pub kind: SinkKind,
    /// File path for `append-file`; stream name for `stream-endpoint`.
    pub target: String,
}

/// Delivery-facing half of a validated request document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubscriptionDraft {
    pub request_id: String,
    pub user_id: String,
    pub output_format: OutputFormat,
    pub delivery_interval_ms: u64,
    pub duration_ms: Option<u64>,
    pub sink: SinkSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    request: Option<RawRequest>,
    user: Option<RawUser>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRequest {
    id: Option<String>,
    attributes: Option<Vec<String>>,
    location: Option<String>,
    format: Option<String>,
    interval_ms: Option<i64>,
    duration_ms: Option<i64>,
    annotations: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUser {
    id: Option<String>,
    sink: Option<RawSink>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSink {
    kind: Option<String>,
    target: Option<String>,
}

/// Validates a request document and splits it into the planning-facing
/// [`Request`] and the delivery-facing [`SubscriptionDraft`].
///
/// `default_request_id` is used when the document carries no `request.id`.
pub fn validate_request(
    document: &[u8],
    format: DocFormat,
    default_request_id: &str,
) -> Result<(Request, SubscriptionDraft), DisseminationError> {
    let raw: RawDocument = document::parse(document, format).map_err(|m| schema("document", m))?;
    let req = raw.request.ok_or_else(|| schema("request", "missing"))?;
    let user = raw.user.ok_or_else(|| schema("user", "missing"))?;

    let attributes = req
        .attributes
        .ok_or_else(|| schema("request.attributes", "missing"))?;
    if attributes.is_empty() {
        return Err(schema(
            "request.attributes",
            "must list at least one attribute",
        ));
    }
    if let Some(a) = attributes.iter().find(|a| a.trim().is_empty()) {
        return Err(schema(
            "request.attributes",
            format!("invalid attribute name `{a}`"),
        ));
    }
    let format_name = req
        .format
        .ok_or_else(|| schema("request.format", "missing"))?;
    let output_format: OutputFormat = format_name
        .parse()
        .map_err(DisseminationError::UnsupportedFormat)?;
    let interval = req
        .interval_ms
        .ok_or_else(|| schema("request.interval_ms", "missing"))?;
    if interval < 1 {
        return Err(DisseminationError::InvalidInterval(format!(
            "interval_ms must be >= 1, got {interval}"
        )));
    }
    let duration = match req.duration_ms {
        None => None,
        Some(d) if d < interval => {
            return Err(DisseminationError::InvalidInterval(format!(
                "duration_ms {d} is shorter than interval_ms {interval}"
            )))
        }
        Some(d) => Some(d as u64),
    };
    let annotations = req
        .annotations
        .ok_or_else(|| schema("request.annotations", "missing"))?;

    let user_id = user.id.ok_or_else(|| schema("user.id", "missing"))?;
    if user_id.trim().is_empty() {
        return Err(schema("user.id", "must be non-empty"));
    }
    let raw_sink = user.sink.ok_or_else(|| schema("user.sink", "missing"))?;
    let kind = match raw_sink.kind.as_deref() {
        Some("stream-endpoint") => SinkKind::StreamEndpoint,
        Some("append-file") => SinkKind::AppendFile,
        Some(other) => {
            return Err(schema(
                "user.sink.kind",
                format!("unknown sink kind `{other}`"),
            ))
        }
        None => return Err(schema("user.sink.kind", "missing")),
    };
    let target = match (kind, raw_sink.target) {
        (SinkKind::AppendFile, None) => {
            return Err(schema("user.sink.target", "required for append-file"))
        }
        (_, Some(t)) if t.trim().is_empty() => {
            return Err(schema("user.sink.target", "must be non-empty"))
        }
        (_, t) => t.unwrap_or_default(),
    };

    let request_id = req.id.unwrap_or_else(|| default_request_id.to_string());
    let request = Request {
        request_id: request_id.clone(),
        requested_attributes: attributes.into_iter().collect(),
        location: req.location,
        output_format,
        delivery_interval_ms: interval as u64,
        duration_ms: duration,
        include_annotations: annotations,
    };
    let draft = SubscriptionDraft {
        request_id,
        user_id,
        output_format,
        delivery_interval_ms: interval as u64,
        duration_ms: duration,
        sink: SinkSpec { kind, target },
    };
    Ok((request, draft))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SubscriptionStatus {
    Active,
    Degraded,
    Expired,
    Cancelled,
}

impl fmt::Display for SubscriptionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubscriptionStatus::Active => "active",
            SubscriptionStatus::Degraded => "degraded",
            SubscriptionStatus::Expired => "expired",
            SubscriptionStatus::Cancelled => "cancelled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subscription {
    pub subscription_id: String,
    pub request_id: String,
    pub user_id: String,
    pub output_format: OutputFormat,
    pub delivery_interval_ms: u64,
    pub sink: SinkSpec,
    pub canonical_key: String,
    pub created_at: Timestamp,
    pub expires_at: Option<Timestamp>,
    pub status: SubscriptionStatus,
}

impl Subscription {
    pub fn is_expired_at(&self, now: Timestamp) -> bool {
        self.expires_at.is_some_and(|e| now >= e)
    }
}

/// Subscription records. Reads run concurrently; mutations are serialized.
#[derive(Debug, Default)]
pub struct SubscriptionStore {
    subscriptions: RwLock<BTreeMap<String, Subscription>>,
    next_id: AtomicU64,
}

impl SubscriptionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a subscription bound to a discoverer key and returns its id.
    pub fn subscribe(
        &self,
        draft: SubscriptionDraft,
        canonical_key: &str,
        now: Timestamp,
    ) -> String {
        let n = self.next_id.fetch_add(1, Ordering::SeqCst) + 1;
        let subscription_id = format!("sub-{n}");
        let sub = Subscription {
            subscription_id: subscription_id.clone(),
            request_id: draft.request_id,
            user_id: draft.user_id,
            output_format: draft.output_format,
            delivery_interval_ms: draft.delivery_interval_ms,
            sink: draft.sink,
            canonical_key: canonical_key.to_string(),
            created_at: now,
            expires_at: draft.duration_ms.map(|d| now + d),
            status: SubscriptionStatus::Active,
        };
        self.subscriptions
            .write()
            .expect("subscription store poisoned")
            .insert(subscription_id.clone(), sub);
        subscription_id
    }

    /// Fetches a subscription, marking it expired if `now` is past its end.
    pub fn get(&self, subscription_id: &str, now: Timestamp) -> Option<Subscription> {
        let mut subs = self
            .subscriptions
            .write()
            .expect("subscription store poisoned");
        let sub = subs.get_mut(subscription_id)?;
        if sub.is_expired_at(now) && sub.status != SubscriptionStatus::Cancelled {
            sub.status = SubscriptionStatus::Expired;
        }
        Some(sub.clone())
    }

    pub fn set_status(
        &self,
        subscription_id: &str,
        status: SubscriptionStatus,
    ) -> Result<(), DisseminationError> {
        let mut subs = self
            .subscriptions
            .write()
            .expect("subscription store poisoned");
        let sub = subs
            .get_mut(subscription_id)
            .ok_or_else(|| DisseminationError::UnknownSubscription(subscription_id.to_string()))?;
        sub.status = status;
        Ok(())
    }

    /// All subscriptions in id order (numeric).
    pub fn list(&self) -> Vec<Subscription> {
        let mut out: Vec<Subscription> = self
            .subscriptions
            .read()
            .expect("subscription store poisoned")
            .values()
            .cloned()
            .collect();
        out.sort_by_key(|s| subscription_ordinal(&s.subscription_id));
        out
    }

    pub fn len(&self) -> usize {
        self.subscriptions
            .read()
            .expect("subscription store poisoned")
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn subscription_ordinal(id: &str) -> (u64, String) {
    let n = id
        .strip_prefix("sub-")
        .and_then(|n| n.parse().ok())
        .unwrap_or(u64::MAX);
    (n, id.to_string())
}

pub const TIMESTAMP_KEY: &str = "timestamp";
pub const LOCATION_KEY: &str = "geographicalLocation";
pub const QUALITY_KEY: &str = "quality";

fn location_cell(locations: &BTreeMap<String, String>) -> String {
    locations
        .iter()
        .map(|(s, l)| format!("{s}={l}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Column names for a record's CSV rendering.
pub fn csv_header(record: &DataRecord) -> Vec<String> {
    let mut cols = vec![TIMESTAMP_KEY.to_string()];
    if record.annotations.geographical_location.is_some() {
        cols.push(LOCATION_KEY.to_string());
    }
    cols.extend(record.values.keys().cloned());
    cols.extend(record.values.keys().map(|a| format!("{QUALITY_KEY}.{a}")));
    cols
}

fn json_line(record: &DataRecord) -> Vec<u8> {
    let mut obj = serde_json::Map::new();
    obj.insert(
        TIMESTAMP_KEY.into(),
        serde_json::Value::from(record.timestamp),
    );
    if let Some(locs) = &record.annotations.geographical_location {
        let m: serde_json::Map<String, serde_json::Value> = locs
            .iter()
            .map(|(s, l)| (s.clone(), serde_json::Value::String(l.clone())))
            .collect();
        obj.insert(LOCATION_KEY.into(), serde_json::Value::Object(m));
    }
    for (a, v) in &record.values {
        obj.insert(a.clone(), v.to_json());
    }
    let q: serde_json::Map<String, serde_json::Value> = record
        .values
        .keys()
        .map(|a| {
            let quality = record
                .annotations
                .quality
                .get(a)
                .copied()
                .unwrap_or(Quality::Unknown);
            (
                a.clone(),
                serde_json::Value::String(quality.as_str().into()),
            )
        })
        .collect();
    obj.insert(QUALITY_KEY.into(), serde_json::Value::Object(q));
    let mut line = serde_json::to_vec(&serde_json::Value::Object(obj)).expect("record serializes");
    line.push(b'\n');
    line
}

fn csv_row(fields: &[String]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(fields).expect("in-memory csv write");
    w.into_inner().expect("in-memory csv flush")
}

fn csv_line(record: &DataRecord) -> Vec<u8> {
    let mut fields = vec![record.timestamp.to_string()];
    if let Some(locs) = &record.annotations.geographical_location {
        fields.push(location_cell(locs));
    }
    for v in record.values.values() {
        fields.push(if v.is_unknown() {
            String::new()
        } else {
            v.to_string()
        });
    }
    for a in record.values.keys() {
        let q = record
            .annotations
            .quality
            .get(a)
            .copied()
            .unwrap_or(Quality::Unknown);
        fields.push(q.as_str().to_string());
    }
    csv_row(&fields)
}

/// Renders one record. CSV output starts with a header row when `with_header`.
pub fn format_record(record: &DataRecord, format: OutputFormat, with_header: bool) -> Vec<u8> {
    match format {
        OutputFormat::JsonLines => json_line(record),
        OutputFormat::Csv => {
            let mut out = if with_header {
                csv_row(&csv_header(record))
            } else {
                Vec::new()
            };
            out.extend(csv_line(record));
            out
        }
    }
}

/// Stateful formatter: the CSV header is written on the first record only.
#[derive(Debug, Clone)]
pub struct RecordFormatter {
    format: OutputFormat,
    header_written: bool,
}

impl RecordFormatter {
    pub fn new(format: OutputFormat) -> Self {
        Self {
            format,
            header_written: false,
        }
    }

    pub fn format(&mut self, record: &DataRecord) -> Vec<u8> {
        let header = !self.header_written;
        self.header_written = true;
        format_record(record, self.format, header)
    }
}

/// A record read back from a delivery.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecord {
    pub timestamp: Timestamp,
    pub geographical_location: Option<BTreeMap<String, String>>,
    pub values: BTreeMap<AttributeName, Value>,
    pub quality: BTreeMap<AttributeName, Quality>,
}

impl ParsedRecord {
    /// Top-level keys in the JSON object order used by deliveries.
    pub fn field_names(&self) -> Vec<String> {
        let mut out = vec![TIMESTAMP_KEY.to_string()];
        if self.geographical_location.is_some() {
            out.push(LOCATION_KEY.to_string());
        }
        out.extend(self.values.keys().cloned());
        out.push(QUALITY_KEY.to_string());
        out
    }
}

fn malformed(m: impl Into<String>) -> DisseminationError {
    DisseminationError::MalformedDelivery(m.into())
}

/// Parses one json-lines delivery line. Also returns the top-level key order.
pub fn parse_json_line(line: &str) -> Result<(ParsedRecord, Vec<String>), DisseminationError> {
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let keys: Vec<String> = obj.keys().cloned().collect();
    let timestamp = obj
        .get(TIMESTAMP_KEY)
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| malformed("missing timestamp"))?;
    let geographical_location = match obj.get(LOCATION_KEY) {
        None => None,
        Some(serde_json::Value::Object(m)) => Some(
            m.iter()
                .map(|(k, v)| {
                    Ok((
                        k.clone(),
                        v.as_str()
                            .ok_or_else(|| malformed("location label"))?
                            .to_string(),
                    ))
                })
                .collect::<Result<_, DisseminationError>>()?,
        ),
        Some(_) => return Err(malformed("geographicalLocation must be an object")),
    };
    let quality = match obj.get(QUALITY_KEY) {
        Some(serde_json::Value::Object(m)) => m
            .iter()
            .map(|(k, v)| {
                let q = v
                    .as_str()
                    .and_then(Quality::parse)
                    .ok_or_else(|| malformed("quality flag"))?;
                Ok((k.clone(), q))
            })
            .collect::<Result<BTreeMap<_, _>, DisseminationError>>()?,
        _ => return Err(malformed("missing quality block")),
    };
    let mut values = BTreeMap::new();
    for (k, v) in &obj {
        if k == TIMESTAMP_KEY || k == LOCATION_KEY || k == QUALITY_KEY {
            continue;
        }
        values.insert(
            k.clone(),
            Value::from_json(v).ok_or_else(|| malformed(format!("value of `{k}`")))?,
        );
    }
    Ok((
        ParsedRecord {
            timestamp,
            geographical_location,
            values,
            quality,
        },
        keys,
    ))
}

/// Parses a CSV delivery stream (header plus rows). Cell text is read back
/// with the attribute kinds given; a cell whose quality is `unknown` is
/// `Value::Unknown`.
pub fn parse_csv(
    text: &str,
    kinds: &BTreeMap<AttributeName, ValueKind>,
) -> Result<Vec<ParsedRecord>, DisseminationError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let cells: BTreeMap<&str, &str> =
            header.iter().map(String::as_str).zip(row.iter()).collect();
        let timestamp = cells
            .get(TIMESTAMP_KEY)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed("timestamp"))?;
        let geographical_location = cells.get(LOCATION_KEY).map(|cell| {
            cell.split(';')
                .filter(|p| !p.is_empty())
                .filter_map(|p| p.split_once('='))
                .map(|(s, l)| (s.to_string(), l.to_string()))
                .collect()
        });
        let mut values = BTreeMap::new();
        let mut quality = BTreeMap::new();
        for col in &header {
            if col == TIMESTAMP_KEY
                || col == LOCATION_KEY
                || col.starts_with(&format!("{QUALITY_KEY}."))
            {
                continue;
            }
            let q = cells
                .get(format!("{QUALITY_KEY}.{col}").as_str())
                .and_then(|q| Quality::parse(q))
                .ok_or_else(|| malformed(format!("quality for `{col}`")))?;
            let v = if q == Quality::Unknown {
                Value::Unknown
            } else {
                let kind = kinds.get(col).copied().unwrap_or(ValueKind::String);
                Value::parse_as(kind, cells[col.as_str()])
                    .ok_or_else(|| malformed(format!("`{col}` is not a {kind}")))?
            };
            values.insert(col.clone(), v);
            quality.insert(col.clone(), q);
        }
        out.push(ParsedRecord {
            timestamp,
            geographical_location,
            values,
            quality,
        });
    }
    Ok(out)
}

/// Where formatted deliveries go.
pub trait Sink: Send {
    fn write(&mut self, bytes: &[u8]) -> io::Result<()>;
}

/// Appends to a file, creating it (and parent directories) on first write.
#[derive(Debug)]
pub struct AppendFileSink {
    path: PathBuf,
    file: Option<File>,
}

impl AppendFileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            file: None,
        }
    }
}

impl Sink for AppendFileSink {
    fn write(&mut self, bytes: &[u8]) -> io::Result<()> {
        if self.file.is_none() {
            if let Some(parent) = self.path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            self.file = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&self.path)?,
            );
        }
        let result = self.file.as_mut().expect("opened above").write_all(bytes);
        if result.is_err() {
            self.file = None;
        }
        result
    }
}

/// In-memory buffer backing a stream endpoint. Clones share the buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    buffer: Arc<Mutex<Vec<u8>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> Vec<u8> {
        self.buffer.lock().expect("memory sink poisoned").clone()
    }
}

impl Sink for MemorySink {
    fn write(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.buffer
            .lock()
            .expect("memory sink poisoned")
            .extend_from_slice(bytes);
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct SinkStats {
    written: AtomicU64,
    failed_writes: AtomicU64,
    pending: AtomicU64,
    degraded: AtomicBool,
}

impl SinkStats {
    pub fn written(&self) -> u64 {
        self.written.load(Ordering::SeqCst)
    }

    pub fn failed_writes(&self) -> u64 {
        self.failed_writes.load(Ordering::SeqCst)
    }

    /// Deliveries handed over but not yet written.
    pub fn pending(&self) -> u64 {
        self.pending.load(Ordering::SeqCst)
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded.load(Ordering::SeqCst)
    }
}

/// Drains one subscription's deliveries into its sink, in order, on a
/// dedicated thread. A failed write keeps the payload queued and is retried
/// when the next delivery arrives.
struct SinkWorker {
    sender: Option<Sender<Vec<u8>>>,
    handle: Option<JoinHandle<()>>,
    stats: Arc<SinkStats>,
}

impl SinkWorker {
    fn spawn(subscription_id: String, mut sink: Box<dyn Sink>) -> Self {
        let (tx, rx): (Sender<Vec<u8>>, Receiver<Vec<u8>>) = mpsc::channel();
        let stats = Arc::new(SinkStats::default());
        let worker_stats = Arc::clone(&stats);
        let handle = std::thread::Builder::new()
            .name(format!("sink-{subscription_id}"))
            .spawn(move || {
                let mut queue: VecDeque<Vec<u8>> = VecDeque::new();
                let mut drain = |queue: &mut VecDeque<Vec<u8>>| {
                    while let Some(bytes) = queue.front() {
                        match sink.write(bytes) {
                            Ok(()) => {
                                queue.pop_front();
                                worker_stats.written.fetch_add(1, Ordering::SeqCst);
                                worker_stats.pending.fetch_sub(1, Ordering::SeqCst);
                                worker_stats.degraded.store(false, Ordering::SeqCst);
                            }
                            Err(e) => {
                                worker_stats.failed_writes.fetch_add(1, Ordering::SeqCst);
                                if !worker_stats.degraded.swap(true, Ordering::SeqCst) {
                                    tracing::warn!(subscription = %subscription_id, error = %e, "sink unavailable");
                                }
                                break;
                            }
                        }
                    }
                };
                while let Ok(bytes) = rx.recv() {
                    queue.push_back(bytes);
                    drain(&mut queue);
                }
                drain(&mut queue);
            })
            .expect("spawn sink worker");
        Self {
            sender: Some(tx),
            handle: Some(handle),
            stats,
        }
    }

    fn send(&self, bytes: Vec<u8>) {
        if let Some(tx) = &self.sender {
            self.stats.pending.fetch_add(1, Ordering::SeqCst);
            if tx.send(bytes).is_err() {
                self.stats.pending.fetch_sub(1, Ordering::SeqCst);
            }
        }
    }

    fn close(&mut self) {
        self.sender.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for SinkWorker {
    fn drop(&mut self) {
        // Detach rather than join: a blocked sink must not hang the caller.
        self.sender.take();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offer {
    /// The record (or a newer one) was formatted and handed to the sink.
    Delivered,
    /// Held as the pending record until the next delivery boundary.
    Held,
    /// The subscription has expired; nothing was delivered.
    Expired,
}

/// Per-subscription delivery state.
pub struct SubscriptionDispatcher {
    subscription_id: String,
    interval_ms: u64,
    expires_at: Option<Timestamp>,
    first_due: Option<Timestamp>,
    next_due: Option<Timestamp>,
    pending: Option<DataRecord>,
    formatter: RecordFormatter,
    delivered: u64,
    samples: Vec<String>,
    worker: SinkWorker,
}

impl fmt::Debug for SubscriptionDispatcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubscriptionDispatcher")
            .field("subscription_id", &self.subscription_id)
            .field("interval_ms", &self.interval_ms)
            .field("delivered", &self.delivered)
            .finish()
    }
}

const SAMPLE_LIMIT: usize = 3;

impl SubscriptionDispatcher {
    pub fn new(subscription: &Subscription, sink: Box<dyn Sink>) -> Self {
        Self {
            subscription_id: subscription.subscription_id.clone(),
            interval_ms: subscription.delivery_interval_ms.max(1),
            expires_at: subscription.expires_at,
            first_due: None,
            next_due: None,
            pending: None,
            formatter: RecordFormatter::new(subscription.output_format),
            delivered: 0,
            samples: Vec::new(),
            worker: SinkWorker::spawn(subscription.subscription_id.clone(), sink),
        }
    }

    pub fn subscription_id(&self) -> &str {
        &self.subscription_id
    }

    pub fn is_expired_at(&self, now: Timestamp) -> bool {
        self.expires_at.is_some_and(|e| now >= e)
    }

    /// Accepts a record from the discoverer. Delivers the newest pending
    /// record when a delivery boundary has been reached.
    pub fn offer(&mut self, record: DataRecord, now: Timestamp) -> Offer {
        if self.is_expired_at(now) {
            self.pending = None;
            return Offer::Expired;
        }
        self.pending = Some(record);
        self.poll(now)
    }

    /// Delivers the pending record if one is waiting and a boundary is due.
    pub fn poll(&mut self, now: Timestamp) -> Offer {
        if self.is_expired_at(now) {
            self.pending = None;
            return Offer::Expired;
        }
        let due = self.next_due.is_none_or(|d| now >= d);
        if !due || self.pending.is_none() {
            return Offer::Held;
        }
        let record = self.pending.take().expect("checked above");
        let bytes = self.formatter.format(&record);
        if self.samples.len() < SAMPLE_LIMIT {
            self.samples
                .push(String::from_utf8_lossy(&bytes).into_owned());
        }
        self.worker.send(bytes);
        self.delivered += 1;
        let base = *self.first_due.get_or_insert(now);
        let periods = (now - base) / self.interval_ms + 1;
        self.next_due = Some(base + periods * self.interval_ms);
        Offer::Delivered
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn stats(&self) -> &SinkStats {
        &self.worker.stats
    }

    /// The first few formatted deliveries.
    pub fn samples(&self) -> &[String] {
        &self.samples
    }

    /// Closes the sink worker and waits for queued writes to finish.
    pub fn close(&mut self) {
        self.worker.close();
    }
}
