//! Context-aware sensing middleware.
//!
//! A consumer asks for high-level context (for example a crop disease status).
//! The engine works out which attributes are needed, which sensors provide
//! them directly and which rules derive the rest, compiles that into a
//! streaming pipeline, and delivers fused, annotated records at the requested
//! format and frequency.
//!
//! Layers, bottom up:
//! - [`acquisition`]: device definitions, wrapper generation and caching, reads.
//! - [`registry`]: sensors, their capabilities and availability.
//! - [`knowledge`]: pluggable domain rule sets.
//! - [`fusion`]: fusion operators and the rule evaluator.
//! - [`reasoning`]: request -> acquisition plan.
//! - [`discoverer`]: plan -> running pipeline, with reuse for identical requests.
//! - [`dissemination`]: request validation, subscriptions, formatting, delivery.
//! - [`engine`]: boot from a scenario config, submit, inspect, run.

pub mod acquisition;
pub mod clock;
pub mod discoverer;
pub mod dissemination;
pub mod document;
pub mod engine;
pub mod fusion;
pub mod graph;
pub mod knowledge;
pub mod numeric;
pub mod reasoning;
pub mod registry;
pub mod value;

/// Scalar used for numeric context values throughout the pipeline.
pub type Number = f64;

pub use clock::{Clock, ClockMode, SimulatedClock, SystemClock, Timestamp};
pub use document::DocFormat;
pub use engine::{Engine, EngineError, ScenarioConfig};
pub use value::{AttributeName, ContextAttribute, Value, ValueKind};
