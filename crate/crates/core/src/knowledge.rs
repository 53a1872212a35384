//! Context knowledge base: pluggable domain rule sets describing how secondary
//! context is derived from other context.
//!
//! Rules are conjunctions of threshold conditions with a single consequent and
//! an optional ELSE value. The attribute dependency graph across all loaded
//! domains must stay acyclic; installing a domain that would close a cycle
//! fails and leaves the knowledge base unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::{self, DocFormat};
use crate::graph::{self, DependencyMap};
use crate::value::{AttributeName, ContextAttribute, Literal, Value, ValueKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnowledgeError {
    #[error("malformed domain document: {0}")]
    MalformedDomain(String),
    #[error("invalid rule `{rule_id}`: {message}")]
    InvalidRule { rule_id: String, message: String },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("cyclic dependency: {}", .0.join(" -> "))]
    CyclicDependency(Vec<AttributeName>),
    #[error("domain `{0}` is already loaded")]
    DuplicateDomain(String),
    #[error("rule id `{0}` is already defined")]
    DuplicateRuleId(String),
    #[error("attribute `{attribute}` is {existing} elsewhere but {found} here")]
    KindConflict {
        attribute: AttributeName,
        existing: ValueKind,
        found: ValueKind,
    },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(AttributeName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Comparator {
    pub fn symbol(&self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
        }
    }

    pub fn is_ordering(&self) -> bool {
        matches!(
            self,
            Comparator::Lt | Comparator::Le | Comparator::Gt | Comparator::Ge
        )
    }

    /// Exact comparison of `value` against `threshold`. `None` when `value`
    /// is unknown. Ordering against a non-number, or equality across kinds,
    /// is definitely false (`!=` definitely true).
    pub fn holds(&self, value: &Value, threshold: &Value) -> Option<bool> {
        if value.is_unknown() || threshold.is_unknown() {
            return None;
        }
        if self.is_ordering() {
            let (Some(a), Some(b)) = (value.as_number(), threshold.as_number()) else {
                return Some(false);
            };
            return Some(match self {
                Comparator::Lt => a < b,
                Comparator::Le => a <= b,
                Comparator::Gt => a > b,
                Comparator::Ge => a >= b,
                _ => unreachable!(),
            });
        }
        let equal = value == threshold;
        Some(if *self == Comparator::Eq {
            equal
        } else {
            !equal
        })
    }
}

impl std::str::FromStr for Comparator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "<" => Comparator::Lt,
            "<=" | "≤" => Comparator::Le,
            ">" => Comparator::Gt,
            ">=" | "≥" => Comparator::Ge,
            "=" | "==" => Comparator::Eq,
            "!=" | "≠" => Comparator::Ne,
            other => return Err(format!("unknown comparator `{other}`")),
        })
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl Serialize for Comparator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Comparator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub attribute: AttributeName,
    pub op: Comparator,
    pub value: Literal,
}

impl Condition {
    /// Three-valued: `None` when the bound value is unknown or absent.
    pub fn evaluate(&self, bindings: &BTreeMap<AttributeName, Value>) -> Option<bool> {
        let v = bindings.get(&self.attribute)?;
        self.op.holds(v, &self.value.to_value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Consequent {
    pub attribute: AttributeName,
    pub value: Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    #[serde(rename = "if")]
    pub conditions: Vec<Condition>,
    #[serde(rename = "then")]
    pub consequent: Consequent,
    #[serde(rename = "else", default, skip_serializing_if = "Option::is_none")]
    pub else_value: Option<Literal>,
}

impl Rule {
    pub fn condition_attributes(&self) -> impl Iterator<Item = &AttributeName> {
        self.conditions.iter().map(|c| &c.attribute)
    }

    fn invalid(&self, message: impl Into<String>) -> KnowledgeError {
        KnowledgeError::InvalidRule {
            rule_id: self.id.clone(),
            message: message.into(),
        }
    }
}

/// One pluggable domain: attribute vocabulary plus derivation rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainPlugin {
    pub domain_id: String,
    #[serde(default)]
    pub attributes: Vec<ContextAttribute>,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

impl DomainPlugin {
    pub fn derived_attributes(&self) -> BTreeSet<&str> {
        self.rules
            .iter()
            .map(|r| r.consequent.attribute.as_str())
            .collect()
    }

    fn dependency_map(&self) -> DependencyMap {
        let mut deps = DependencyMap::new();
        for r in &self.rules {
            deps.entry(r.consequent.attribute.clone())
                .or_default()
                .extend(r.condition_attributes().cloned());
        }
        deps
    }

    /// Checks the plugin in isolation.
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.domain_id.trim().is_empty() {
            return Err(KnowledgeError::InvalidDomain(
                "domain_id must be non-empty".into(),
            ));
        }
        let mut declared: BTreeMap<&str, ValueKind> = BTreeMap::new();
        for a in &self.attributes {
            if declared.insert(a.name.as_str(), a.kind).is_some() {
                return Err(KnowledgeError::InvalidDomain(format!(
                    "attribute `{}` declared twice",
                    a.name
                )));
            }
        }
        let mut ids = BTreeSet::new();
        let mut consequent_kinds: BTreeMap<&str, ValueKind> = BTreeMap::new();
        for rule in &self.rules {
            if rule.id.trim().is_empty() {
                return Err(KnowledgeError::InvalidDomain(
                    "rule id must be non-empty".into(),
                ));
            }
            if !ids.insert(rule.id.as_str()) {
                return Err(KnowledgeError::DuplicateRuleId(rule.id.clone()));
            }
            if rule.conditions.is_empty() {
                return Err(rule.invalid("needs at least one condition"));
            }
            let target = rule.consequent.attribute.as_str();
            for c in &rule.conditions {
                if c.attribute == target {
                    return Err(rule.invalid(format!("`{target}` appears in its own conditions")));
                }
                if c.op.is_ordering() && c.value.kind() != ValueKind::Number {
                    return Err(rule.invalid(format!("`{}` needs a numeric threshold", c.op)));
                }
                if let Some(kind) = declared.get(c.attribute.as_str()) {
                    if c.op.is_ordering() && *kind != ValueKind::Number {
                        return Err(rule.invalid(format!(
                            "`{}` is {kind}; `{}` needs a number",
                            c.attribute, c.op
                        )));
                    }
                    if *kind != c.value.kind() {
                        return Err(rule.invalid(format!(
                            "threshold for `{}` is {} but the attribute is {kind}",
                            c.attribute,
                            c.value.kind()
                        )));
                    }
                }
            }
            let kind = rule.consequent.value.kind();
            if let Some(e) = &rule.else_value {
                if e.kind() != kind {
                    return Err(rule.invalid("ELSE value kind differs from THEN value kind"));
                }
            }
            if let Some(d) = declared.get(target) {
                if *d != kind {
                    return Err(KnowledgeError::KindConflict {
                        attribute: target.to_string(),
                        existing: *d,
                        found: kind,
                    });
                }
            }
            if let Some(prev) = consequent_kinds.insert(target, kind) {
                if prev != kind {
                    return Err(KnowledgeError::KindConflict {
                        attribute: target.to_string(),
                        existing: prev,
                        found: kind,
                    });
                }
            }
        }
        if let Some(cycle) = graph::find_cycle(&self.dependency_map()) {
            return Err(KnowledgeError::CyclicDependency(cycle));
        }
        Ok(())
    }

    /// Declared attributes, plus undeclared ones referenced by rules with the
    /// kind implied by their thresholds or consequent values.
    fn vocabulary(&self) -> BTreeMap<AttributeName, ContextAttribute> {
        let mut out: BTreeMap<AttributeName, ContextAttribute> = self
            .attributes
            .iter()
            .map(|a| (a.name.clone(), a.clone()))
            .collect();
        for r in &self.rules {
            out.entry(r.consequent.attribute.clone())
                .or_insert_with(|| {
                    ContextAttribute::new(&r.consequent.attribute, "", r.consequent.value.kind())
                });
            for c in &r.conditions {
                out.entry(c.attribute.clone())
                    .or_insert_with(|| ContextAttribute::new(&c.attribute, "", c.value.kind()));
            }
        }
        out
    }
}

/// Parses and validates a rule document.
pub fn load_domain(document: &[u8], format: DocFormat) -> Result<DomainPlugin, KnowledgeError> {
    let plugin: DomainPlugin =
        document::parse(document, format).map_err(KnowledgeError::MalformedDomain)?;
    plugin.validate()?;
    Ok(plugin)
}

#[derive(Debug, Clone, Default)]
struct KbState {
    plugins: Vec<DomainPlugin>,
    attributes: BTreeMap<AttributeName, ContextAttribute>,
}

impl KbState {
    fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.plugins.iter().flat_map(|p| p.rules.iter())
    }

    fn dependency_map(&self) -> DependencyMap {
        let mut deps = DependencyMap::new();
        for r in self.rules() {
            deps.entry(r.consequent.attribute.clone())
                .or_default()
                .extend(r.condition_attributes().cloned());
        }
        deps
    }

    fn with(&self, plugin: DomainPlugin) -> Result<KbState, KnowledgeError> {
        if self.plugins.iter().any(|p| p.domain_id == plugin.domain_id) {
            return Err(KnowledgeError::DuplicateDomain(plugin.domain_id));
        }
        let existing_ids: BTreeSet<&str> = self.rules().map(|r| r.id.as_str()).collect();
        if let Some(r) = plugin
            .rules
            .iter()
            .find(|r| existing_ids.contains(r.id.as_str()))
        {
            return Err(KnowledgeError::DuplicateRuleId(r.id.clone()));
        }
        let mut attributes = self.attributes.clone();
        for (name, attr) in plugin.vocabulary() {
            match attributes.get(&name) {
                Some(prev) if prev.kind != attr.kind => {
                    return Err(KnowledgeError::KindConflict {
                        attribute: name,
                        existing: prev.kind,
                        found: attr.kind,
                    })
                }
                Some(prev) if prev.unit.is_empty() && !attr.unit.is_empty() => {
                    attributes.insert(name, attr);
                }
                Some(_) => {}
                None => {
                    attributes.insert(name, attr);
                }
            }
        }
        let mut next = self.clone();
        next.attributes = attributes;
        next.plugins.push(plugin);
        if let Some(cycle) = graph::find_cycle(&next.dependency_map()) {
            return Err(KnowledgeError::CyclicDependency(cycle));
        }
        Ok(next)
    }
}

/// The set of loaded domain plugins. Queries run concurrently; installs are
/// serialized and atomic.
#[derive(Debug, Default)]
pub struct KnowledgeBase {
    state: RwLock<KbState>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, KbState> {
        self.state.read().expect("knowledge base poisoned")
    }

    /// Adds a validated plugin. On error the knowledge base is unchanged.
    pub fn install(&self, plugin: DomainPlugin) -> Result<(), KnowledgeError> {
        plugin.validate()?;
        let mut guard = self.state.write().expect("knowledge base poisoned");
        let next = guard.with(plugin)?;
        *guard = next;
        Ok(())
    }

    /// Parses, validates and installs a rule document.
    pub fn load_document(
        &self,
        document: &[u8],
        format: DocFormat,
    ) -> Result<DomainPlugin, KnowledgeError> {
        let plugin = load_domain(document, format)?;
        self.install(plugin.clone())?;
        Ok(plugin)
    }

    pub fn knows(&self, attribute: &str) -> bool {
        self.read().attributes.contains_key(attribute)
    }

    pub fn attribute(&self, name: &str) -> Option<ContextAttribute> {
        self.read().attributes.get(name).cloned()
    }

    pub fn attributes(&self) -> Vec<ContextAttribute> {
        self.read().attributes.values().cloned().collect()
    }

    /// Union of condition attributes over every rule deriving `attribute`.
    pub fn dependencies(&self, attribute: &str) -> Result<BTreeSet<AttributeName>, KnowledgeError> {
        let state = self.read();
        if !state.attributes.contains_key(attribute) {
            return Err(KnowledgeError::UnknownAttribute(attribute.to_string()));
        }
        Ok(state
            .rules()
            .filter(|r| r.consequent.attribute == attribute)
            .flat_map(|r| r.condition_attributes().cloned())
            .collect())
    }

    /// Rules deriving `attribute`, in load order then document order.
    pub fn rules_for(&self, attribute: &str) -> Vec<Rule> {
        self.read()
            .rules()
            .filter(|r| r.consequent.attribute == attribute)
            .cloned()
            .collect()
    }

    pub fn is_derivable(&self, attribute: &str) -> bool {
        self.read()
            .rules()
            .any(|r| r.consequent.attribute == attribute)
    }

    /// Consequent attribute -> each rule's own condition attribute set.
    pub fn derivations(&self) -> BTreeMap<AttributeName, Vec<BTreeSet<AttributeName>>> {
        let mut out: BTreeMap<AttributeName, Vec<BTreeSet<AttributeName>>> = BTreeMap::new();
        for r in self.read().rules() {
            out.entry(r.consequent.attribute.clone())
                .or_default()
                .push(r.condition_attributes().cloned().collect());
        }
        out
    }

    pub fn dependency_map(&self) -> DependencyMap {
        self.read().dependency_map()
    }

    pub fn domains(&self) -> Vec<DomainPlugin> {
        self.read().plugins.clone()
    }

    pub fn domain_count(&self) -> usize {
        self.read().plugins.len()
    }
}
