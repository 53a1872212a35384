//! Turns a validated request into an acquisition plan: which attributes are
//! needed, which sensors provide them directly and which rule nodes derive
//! the rest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fusion::{Capability, FusionError, FusionRepository};
use crate::graph::{self, DependencyMap};
use crate::knowledge::{KnowledgeBase, Rule};
use crate::registry::{Location, ProviderConstraints, ProviderId, Registry};
use crate::value::AttributeName;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasoningError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(AttributeName),
    #[error("attribute `{attribute}` cannot be satisfied (missing: {})", .missing.join(", "))]
    UnsatisfiableAttribute {
        attribute: AttributeName,
        missing: Vec<AttributeName>,
    },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputFormat {
    #[serde(rename = "json-lines")]
    JsonLines,
    #[serde(rename = "csv")]
    Csv,
}

impl OutputFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutputFormat::JsonLines => "json-lines",
            OutputFormat::Csv => "csv",
        }
    }

    pub fn file_extension(&self) -> &'static str {
        match self {
            OutputFormat::JsonLines => "jsonl",
            OutputFormat::Csv => "csv",
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json-lines" => Ok(OutputFormat::JsonLines),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(other.to_string()),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A validated, planning-facing request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Request {
    pub request_id: String,
    pub requested_attributes: BTreeSet<AttributeName>,
    pub location: Option<String>,
    pub output_format: OutputFormat,
    pub delivery_interval_ms: u64,
    pub duration_ms: Option<u64>,
    pub include_annotations: bool,
}

impl Request {
    pub fn new(
        request_id: impl Into<String>,
        attributes: &[&str],
        delivery_interval_ms: u64,
    ) -> Self {
        Self {
            request_id: request_id.into(),
            requested_attributes: attributes.iter().map(|a| a.to_string()).collect(),
            location: None,
            output_format: OutputFormat::JsonLines,
            delivery_interval_ms,
            duration_ms: None,
            include_annotations: true,
        }
    }

    pub fn validate(&self) -> Result<(), ReasoningError> {
        if self.requested_attributes.is_empty() {
            return Err(ReasoningError::InvalidRequest(
                "no attributes requested".into(),
            ));
        }
        if self.delivery_interval_ms == 0 {
            return Err(ReasoningError::InvalidRequest(
                "delivery interval must be >= 1 ms".into(),
            ));
        }
        if let Some(d) = self.duration_ms {
            if d < self.delivery_interval_ms {
                return Err(ReasoningError::InvalidRequest(format!(
                    "duration {d} ms is shorter than the delivery interval {} ms",
                    self.delivery_interval_ms
                )));
            }
        }
        Ok(())
    }

    pub fn constraints(&self) -> ProviderConstraints {
        ProviderConstraints {
            location_label: self.location.clone(),
            max_cost_rank: None,
        }
    }
}

/// Key under which identical requests share one pipeline. Depends only on the
/// attribute set, location, interval and annotation flag.
pub fn canonical_key(request: &Request) -> String {
    let attrs: Vec<&str> = request
        .requested_attributes
        .iter()
        .map(String::as_str)
        .collect();
    format!(
        "attributes={};location={};interval_ms={};annotations={}",
        serde_json::to_string(&attrs).expect("string list serializes"),
        serde_json::to_string(&request.location).expect("option serializes"),
        request.delivery_interval_ms,
        request.include_annotations
    )
}

fn known(attribute: &str, registry: &Registry, kb: &KnowledgeBase) -> bool {
    kb.knows(attribute)
        || registry
            .entries()
            .iter()
            .any(|e| e.descriptor.provides(attribute))
}

/// The requested attributes closed under rule dependencies.
pub fn required_context(
    request: &Request,
    registry: &Registry,
    kb: &KnowledgeBase,
) -> Result<BTreeSet<AttributeName>, ReasoningError> {
    for a in &request.requested_attributes {
        if !known(a, registry, kb) {
            return Err(ReasoningError::UnknownAttribute(a.clone()));
        }
    }
    let mut out = BTreeSet::new();
    let mut stack: Vec<AttributeName> = request.requested_attributes.iter().cloned().collect();
    while let Some(a) = stack.pop() {
        if !out.insert(a.clone()) {
            continue;
        }
        if kb.knows(&a) {
            stack.extend(
                kb.dependencies(&a)
                    .map_err(|_| ReasoningError::UnknownAttribute(a.clone()))?,
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Classification {
    pub primary: BTreeSet<AttributeName>,
    pub secondary: BTreeSet<AttributeName>,
}

/// Partitions attributes into directly acquirable (primary) and rule-derived
/// (secondary). Direct acquisition wins when both are possible.
pub fn classify(
    attributes: &BTreeSet<AttributeName>,
    registry: &Registry,
    kb: &KnowledgeBase,
    constraints: &ProviderConstraints,
) -> Result<Classification, ReasoningError> {
    let has_provider = |a: &str| !registry.find_providers(a, constraints).is_empty();
    let deps_of = |a: &str| kb.dependencies(a).unwrap_or_default();

    // Everything reachable through attributes that must be derived.
    let mut scope: BTreeSet<AttributeName> = BTreeSet::new();
    let mut primary: BTreeSet<AttributeName> = BTreeSet::new();
    let mut stack: Vec<AttributeName> = attributes.iter().cloned().collect();
    while let Some(a) = stack.pop() {
        if !scope.insert(a.clone()) {
            continue;
        }
        if has_provider(&a) {
            primary.insert(a);
        } else {
            stack.extend(deps_of(&a));
        }
    }

    let mut satisfiable = primary.clone();
    while let Some(next) = scope
        .iter()
        .filter(|a| !satisfiable.contains(*a))
        .find(|a| kb.is_derivable(a) && deps_of(a).iter().all(|d| satisfiable.contains(d)))
        .cloned()
    {
        satisfiable.insert(next);
    }

    let unsatisfiable: BTreeSet<&AttributeName> =
        scope.iter().filter(|a| !satisfiable.contains(*a)).collect();
    if !unsatisfiable.is_empty() {
        let missing_deps = |a: &str| -> Vec<AttributeName> {
            deps_of(a)
                .into_iter()
                .filter(|d| !satisfiable.contains(d))
                .collect()
        };
        // Report the derived attribute closest to the root cause: one whose
        // unsatisfiable dependencies have no rules of their own.
        let culprit = unsatisfiable
            .iter()
            .find(|a| kb.is_derivable(a) && missing_deps(a).iter().all(|d| !kb.is_derivable(d)))
            .or_else(|| unsatisfiable.iter().find(|a| !kb.is_derivable(a)))
            .or_else(|| unsatisfiable.iter().next())
            .expect("non-empty");
        let missing = if kb.is_derivable(culprit) {
            missing_deps(culprit)
        } else {
            Vec::new()
        };
        return Err(ReasoningError::UnsatisfiableAttribute {
            attribute: (*culprit).clone(),
            missing,
        });
    }

    let secondary = satisfiable.difference(&primary).cloned().collect();
    Ok(Classification {
        primary: primary.intersection(&scope).cloned().collect(),
        secondary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceNode {
    pub node_id: String,
    pub provider_id: ProviderId,
    pub sensor_id: String,
    pub model_id: String,
    pub location: Location,
    pub attributes: Vec<AttributeName>,
}

fn rule_ids<S: Serializer>(rules: &[Rule], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(rules.iter().map(|r| r.id.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeriveNode {
    pub node_id: String,
    pub attribute: AttributeName,
    pub operator_id: String,
    #[serde(serialize_with = "rule_ids")]
    pub rules: Vec<Rule>,
    pub inputs: Vec<AttributeName>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PlanNode {
    Source(SourceNode),
    Derive(DeriveNode),
}

impl PlanNode {
    pub fn node_id(&self) -> &str {
        match self {
            PlanNode::Source(s) => &s.node_id,
            PlanNode::Derive(d) => &d.node_id,
        }
    }

    /// Attributes this node produces.
    pub fn produces(&self) -> Vec<&AttributeName> {
        match self {
            PlanNode::Source(s) => s.attributes.iter().collect(),
            PlanNode::Derive(d) => vec![&d.attribute],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct PlanEdge {
    pub from: AttributeName,
    pub to: AttributeName,
}

/// An acyclic acquisition plan: source nodes feed rule nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSpec {
    pub plan_id: String,
    pub canonical_key: String,
    pub requested: Vec<AttributeName>,
    pub nodes: Vec<PlanNode>,
    pub edges: Vec<PlanEdge>,
    pub outputs: Vec<AttributeName>,
    pub include_annotations: bool,
    pub delivery_interval_ms: u64,
}

impl PlanSpec {
    pub fn sources(&self) -> impl Iterator<Item = &SourceNode> {
        self.nodes.iter().filter_map(|n| match n {
            PlanNode::Source(s) => Some(s),
            _ => None,
        })
    }

    pub fn derives(&self) -> impl Iterator<Item = &DeriveNode> {
        self.nodes.iter().filter_map(|n| match n {
            PlanNode::Derive(d) => Some(d),
            _ => None,
        })
    }

    /// Derived attribute -> its inputs.
    pub fn dependency_map(&self) -> DependencyMap {
        self.derives()
            .map(|d| (d.attribute.clone(), d.inputs.iter().cloned().collect()))
            .collect()
    }

    /// Node ids in an order where every node follows its inputs: sources
    /// first (plan order), then derive nodes topologically.
    pub fn evaluation_order(&self) -> Result<Vec<String>, ReasoningError> {
        let topo = graph::topological_order(&self.dependency_map())
            .ok_or_else(|| ReasoningError::InvalidPlan("dependency cycle".into()))?;
        let mut order: Vec<String> = self.sources().map(|s| s.node_id.clone()).collect();
        let by_attr: BTreeMap<&str, &str> = self
            .derives()
            .map(|d| (d.attribute.as_str(), d.node_id.as_str()))
            .collect();
        order.extend(
            topo.iter()
                .filter_map(|a| by_attr.get(a.as_str()).map(|s| s.to_string())),
        );
        Ok(order)
    }

    /// Checks structural invariants; with a registry, also that every source
    /// references a registered, online provider.
    pub fn validate(&self, registry: Option<&Registry>) -> Result<(), ReasoningError> {
        let bad = |m: String| Err(ReasoningError::InvalidPlan(m));
        let mut producers: BTreeMap<&str, usize> = BTreeMap::new();
        for n in &self.nodes {
            for a in n.produces() {
                *producers.entry(a.as_str()).or_default() += 1;
            }
        }
        if let Some((a, _)) = producers.iter().find(|(_, c)| **c > 1) {
            return bad(format!("`{a}` is produced by more than one node"));
        }
        for d in self.derives() {
            for i in &d.inputs {
                if !producers.contains_key(i.as_str()) {
                    return bad(format!("input `{i}` of `{}` has no producer", d.attribute));
                }
            }
        }
        if graph::find_cycle(&self.dependency_map()).is_some() {
            return bad("dependency cycle".into());
        }
        for a in self.requested.iter().chain(&self.outputs) {
            if !producers.contains_key(a.as_str()) {
                return bad(format!("`{a}` is not produced by any node"));
            }
        }
        if let Some(registry) = registry {
            for s in self.sources() {
                match registry.get(s.provider_id) {
                    Some(e)
                        if e.descriptor.availability == crate::registry::Availability::Online => {}
                    Some(_) => return bad(format!("provider `{}` is offline", s.sensor_id)),
                    None => return bad(format!("provider `{}` is not registered", s.sensor_id)),
                }
            }
        }
        Ok(())
    }

    /// Structured-text dump of nodes and edges.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

fn plan_id_for(key: &str) -> String {
    let digest = Sha256::digest(key.as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("plan-{hex}")
}

/// Builds the plan for a request: one source node per selected provider (the
/// registry's best for each primary attribute) and one rule-evaluation node
/// per secondary attribute.
pub fn build_plan(
    request: &Request,
    registry: &Registry,
    kb: &KnowledgeBase,
    fusion: &FusionRepository,
) -> Result<PlanSpec, ReasoningError> {
    request.validate()?;
    required_context(request, registry, kb)?;
    let constraints = request.constraints();
    let classes = classify(&request.requested_attributes, registry, kb, &constraints)?;

    let mut by_provider: BTreeMap<
        ProviderId,
        (crate::registry::ProviderEntry, BTreeSet<AttributeName>),
    > = BTreeMap::new();
    for a in &classes.primary {
        let best = registry
            .find_providers(a, &constraints)
            .into_iter()
            .next()
            .ok_or_else(|| ReasoningError::UnsatisfiableAttribute {
                attribute: a.clone(),
                missing: vec![],
            })?;
        by_provider
            .entry(best.provider_id)
            .or_insert_with(|| (best.clone(), BTreeSet::new()))
            .1
            .insert(a.clone());
    }

    let mut nodes: Vec<PlanNode> = by_provider
        .into_values()
        .map(|(entry, attrs)| {
            PlanNode::Source(SourceNode {
                node_id: format!("source:{}", entry.descriptor.sensor_id),
                provider_id: entry.provider_id,
                sensor_id: entry.descriptor.sensor_id.clone(),
                model_id: entry.descriptor.model_id.clone(),
                location: entry.descriptor.location.clone(),
                attributes: attrs.into_iter().collect(),
            })
        })
        .collect();
    nodes.sort_by(|a, b| a.node_id().cmp(b.node_id()));

    let mut edges = Vec::new();
    if !classes.secondary.is_empty() {
        let rule_eval = fusion.find_operator(&Capability::RuleEval, None)?;
        for a in &classes.secondary {
            let inputs: Vec<AttributeName> = kb
                .dependencies(a)
                .map_err(|_| ReasoningError::UnknownAttribute(a.clone()))?
                .into_iter()
                .collect();
            edges.extend(inputs.iter().map(|i| PlanEdge {
                from: i.clone(),
                to: a.clone(),
            }));
            nodes.push(PlanNode::Derive(DeriveNode {
                node_id: format!("derive:{a}"),
                attribute: a.clone(),
                operator_id: rule_eval.descriptor().operator_id.clone(),
                rules: kb.rules_for(a),
                inputs,
            }));
        }
    }
    edges.sort();

    let outputs: Vec<AttributeName> = if request.include_annotations {
        classes.primary.union(&classes.secondary).cloned().collect()
    } else {
        request.requested_attributes.iter().cloned().collect()
    };
    let key = canonical_key(request);
    let plan = PlanSpec {
        plan_id: plan_id_for(&key),
        canonical_key: key,
        requested: request.requested_attributes.iter().cloned().collect(),
        nodes,
        edges,
        outputs,
        include_annotations: request.include_annotations,
        delivery_interval_ms: request.delivery_interval_ms,
    };
    plan.validate(Some(registry))?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_key_ignores_identity_and_format() {
        let mut a = Request::new("r-1", &["b", "a"], 1000);
        let mut b = Request::new("r-2", &["a", "b"], 1000);
        a.output_format = OutputFormat::Csv;
        b.duration_ms = Some(5000);
        assert_eq!(canonical_key(&a), canonical_key(&b));
        b.delivery_interval_ms = 2000;
        assert_ne!(canonical_key(&a), canonical_key(&b));
    }

    #[test]
    fn request_validation() {
        let mut r = Request::new("r", &["a"], 1000);
        assert!(r.validate().is_ok());
        r.duration_ms = Some(999);
        assert!(r.validate().is_err());
        r.duration_ms = None;
        r.delivery_interval_ms = 0;
        assert!(r.validate().is_err());
        assert!(Request::new("r", &[], 1).validate().is_err());
    }

    #[test]
    fn unknown_attribute_rejected() {
        let r = Request::new("r", &["cropYieldForecast"], 1000);
        assert_eq!(
            required_context(&r, &Registry::new(), &KnowledgeBase::new()),
            Err(ReasoningError::UnknownAttribute("cropYieldForecast".into()))
        );
    }
}
