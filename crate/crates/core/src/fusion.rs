//! Data fusion operators and the repository that describes and selects them.
//!
//! Every operator is a pure function of its inputs and parameters. Except for
//! rule evaluation, any unknown input makes the output unknown; the repository
//! enforces this for plugged-in operators as well as the built-ins.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::knowledge::{Comparator, Rule};
use crate::numeric;
use crate::value::{AttributeName, Value, ValueKind};
use crate::Number;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("operator `{0}` is already registered")]
    DuplicateOperatorId(String),
    #[error("descriptor `{operator_id}` does not fit capability {capability}: {message}")]
    SignatureMismatch {
        operator_id: String,
        capability: Capability,
        message: String,
    },
    #[error("no operator for capability {0}")]
    NoOperatorFound(Capability),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("operator `{operator_id}` expects {expected} inputs, got {got}")]
    ArityMismatch {
        operator_id: String,
        expected: String,
        got: usize,
    },
    #[error("operator `{operator_id}` input {index}: expected {expected}, got {got}")]
    KindMismatch {
        operator_id: String,
        index: usize,
        expected: KindSpec,
        got: ValueKind,
    },
    #[error("operator `{operator_id}` parameter `{param}`: {message}")]
    InvalidParams {
        operator_id: String,
        param: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Capability {
    Compare,
    LogicalAnd,
    LogicalOr,
    RuleEval,
    WindowAverage,
    LatestValue,
    ImputeLinear,
    /// Capabilities contributed by plug-in operators.
    Other(String),
}

impl Capability {
    pub fn as_str(&self) -> &str {
        match self {
            Capability::Compare => "compare",
            Capability::LogicalAnd => "logical-and",
            Capability::LogicalOr => "logical-or",
            Capability::RuleEval => "rule-eval",
            Capability::WindowAverage => "window-average",
            Capability::LatestValue => "latest-value",
            Capability::ImputeLinear => "impute-linear",
            Capability::Other(s) => s,
        }
    }
}

impl From<&str> for Capability {
    fn from(s: &str) -> Self {
        match s {
            "compare" => Capability::Compare,
            "logical-and" => Capability::LogicalAnd,
            "logical-or" => Capability::LogicalOr,
            "rule-eval" => Capability::RuleEval,
            "window-average" => Capability::WindowAverage,
            "latest-value" => Capability::LatestValue,
            "impute-linear" => Capability::ImputeLinear,
            other => Capability::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Capability {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSpec {
    Any,
    #[serde(untagged)]
    Exact(ValueKind),
}

impl KindSpec {
    pub fn admits(&self, kind: ValueKind) -> bool {
        match self {
            KindSpec::Any => true,
            KindSpec::Exact(k) => *k == kind,
        }
    }
}

impl fmt::Display for KindSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KindSpec::Any => f.write_str("any"),
            KindSpec::Exact(k) => k.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InputArity {
    Fixed(Vec<KindSpec>),
    /// One or more inputs of the same kind.
    Variadic(KindSpec),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Signature {
    pub inputs: InputArity,
    pub output: KindSpec,
}

impl Signature {
    pub fn fixed(inputs: &[KindSpec], output: KindSpec) -> Self {
        Self {
            inputs: InputArity::Fixed(inputs.to_vec()),
            output,
        }
    }

    pub fn variadic(input: KindSpec, output: KindSpec) -> Self {
        Self {
            inputs: InputArity::Variadic(input),
            output,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Number,
    Text,
    Numbers,
    Names,
    Rules,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamKind) -> Self {
        Self {
            name: name.into(),
            kind,
            required: true,
        }
    }

    pub fn optional(name: &str, kind: ParamKind) -> Self {
        Self {
            name: name.into(),
            kind,
            required: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorDescriptor {
    pub operator_id: String,
    pub capability: Capability,
    pub signature: Signature,
    pub params: Vec<ParamSpec>,
    pub description: String,
}

impl OperatorDescriptor {
    /// Checks that the signature fits the capability's contract.
    pub fn validate(&self) -> Result<(), FusionError> {
        let mismatch = |message: &str| FusionError::SignatureMismatch {
            operator_id: self.operator_id.clone(),
            capability: self.capability.clone(),
            message: message.to_string(),
        };
        if self.operator_id.trim().is_empty() {
            return Err(mismatch("operator id must be non-empty"));
        }
        let num = KindSpec::Exact(ValueKind::Number);
        let boolean = KindSpec::Exact(ValueKind::Boolean);
        let sig = &self.signature;
        match self.capability {
            Capability::Compare => {
                if sig.inputs != InputArity::Fixed(vec![num, num]) || sig.output != boolean {
                    return Err(mismatch(
                        "compare takes exactly 2 numbers and yields a boolean",
                    ));
                }
            }
            Capability::LogicalAnd | Capability::LogicalOr => {
                let ok_inputs = match &sig.inputs {
                    InputArity::Variadic(k) => *k == boolean,
                    InputArity::Fixed(ks) => ks.len() >= 2 && ks.iter().all(|k| *k == boolean),
                };
                if !ok_inputs || sig.output != boolean {
                    return Err(mismatch(
                        "logical operators take booleans and yield a boolean",
                    ));
                }
            }
            Capability::WindowAverage => {
                if sig.inputs != InputArity::Variadic(num) || sig.output != num {
                    return Err(mismatch("window-average takes numbers and yields a number"));
                }
            }
            Capability::ImputeLinear => {
                if sig.inputs != InputArity::Fixed(vec![num, num]) || sig.output != num {
                    return Err(mismatch(
                        "impute-linear takes 2 numbers and yields a number",
                    ));
                }
            }
            Capability::LatestValue => {
                let InputArity::Variadic(k) = sig.inputs else {
                    return Err(mismatch("latest-value is variadic"));
                };
                if k != sig.output {
                    return Err(mismatch(
                        "latest-value output kind must equal its input kind",
                    ));
                }
            }
            Capability::RuleEval => {
                if !matches!(sig.inputs, InputArity::Variadic(_)) {
                    return Err(mismatch("rule-eval is variadic"));
                }
            }
            Capability::Other(_) => {}
        }
        Ok(())
    }
}

/// A named parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Number(Number),
    Text(String),
    Numbers(Vec<Number>),
    Names(Vec<AttributeName>),
    Rules(Arc<Vec<Rule>>),
}

impl Param {
    pub fn kind(&self) -> ParamKind {
        match self {
            Param::Number(_) => ParamKind::Number,
            Param::Text(_) => ParamKind::Text,
            Param::Numbers(_) => ParamKind::Numbers,
            Param::Names(_) => ParamKind::Names,
            Param::Rules(_) => ParamKind::Rules,
        }
    }
}

pub type Params = BTreeMap<String, Param>;

/// Builds a parameter map from `(name, value)` pairs.
pub fn params<const N: usize>(pairs: [(&str, Param); N]) -> Params {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// The implementation half of an operator. Inputs have already been checked
/// against the descriptor's signature and parameter schema.
pub trait FusionOperator: Send + Sync {
    fn apply(&self, inputs: &[Value], params: &Params) -> Result<Value, FusionError>;
}

impl<F> FusionOperator for F
where
    F: Fn(&[Value], &Params) -> Result<Value, FusionError> + Send + Sync,
{
    fn apply(&self, inputs: &[Value], params: &Params) -> Result<Value, FusionError> {
        self(inputs, params)
    }
}

/// A registered operator: descriptor plus implementation.
#[derive(Clone)]
pub struct OperatorHandle {
    descriptor: Arc<OperatorDescriptor>,
    implementation: Arc<dyn FusionOperator>,
}

impl fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("operator_id", &self.descriptor.operator_id)
            .finish()
    }
}

impl OperatorHandle {
    pub fn descriptor(&self) -> &OperatorDescriptor {
        &self.descriptor
    }

    /// Checks inputs and parameters, applies unknown propagation, then runs
    /// the implementation.
    pub fn apply(&self, inputs: &[Value], params: &Params) -> Result<Value, FusionError> {
        let d = &self.descriptor;
        let id = || d.operator_id.clone();
        let specs: Vec<KindSpec> = match &d.signature.inputs {
            InputArity::Fixed(ks) => {
                if inputs.len() != ks.len() {
                    return Err(FusionError::ArityMismatch {
                        operator_id: id(),
                        expected: ks.len().to_string(),
                        got: inputs.len(),
                    });
                }
                ks.clone()
            }
            InputArity::Variadic(k) => {
                if inputs.is_empty() {
                    return Err(FusionError::ArityMismatch {
                        operator_id: id(),
                        expected: "1 or more".into(),
                        got: 0,
                    });
                }
                vec![*k; inputs.len()]
            }
        };
        for (index, (v, spec)) in inputs.iter().zip(&specs).enumerate() {
            if let Some(kind) = v.kind() {
                if !spec.admits(kind) {
                    return Err(FusionError::KindMismatch {
                        operator_id: id(),
                        index,
                        expected: *spec,
                        got: kind,
                    });
                }
            }
        }
        for p in &d.params {
            match params.get(&p.name) {
                None if p.required => {
                    return Err(FusionError::InvalidParams {
                        operator_id: id(),
                        param: p.name.clone(),
                        message: "missing".into(),
                    })
                }
                Some(v) if v.kind() != p.kind => {
                    return Err(FusionError::InvalidParams {
                        operator_id: id(),
                        param: p.name.clone(),
                        message: format!("expected {:?}", p.kind),
                    })
                }
                _ => {}
            }
        }
        if d.capability != Capability::RuleEval && inputs.iter().any(Value::is_unknown) {
            return Ok(Value::Unknown);
        }
        self.implementation.apply(inputs, params)
    }
}

/// Descriptor-indexed operator repository. Selection among operators with the
/// same capability picks the lowest operator id.
#[derive(Default)]
pub struct FusionRepository {
    operators: RwLock<BTreeMap<String, OperatorHandle>>,
}

impl fmt::Debug for FusionRepository {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FusionRepository")
            .field("operators", &self.descriptors().len())
            .finish()
    }
}

impl FusionRepository {
    pub fn empty() -> Self {
        Self::default()
    }

    /// A repository preloaded with the built-in operators.
    pub fn with_builtins() -> Self {
        let repo = Self::empty();
        for (d, op) in builtins() {
            repo.register_operator(d, op)
                .expect("built-in operators are valid");
        }
        repo
    }

    pub fn register_operator(
        &self,
        descriptor: OperatorDescriptor,
        implementation: Arc<dyn FusionOperator>,
    ) -> Result<String, FusionError> {
        descriptor.validate()?;
        let mut ops = self.operators.write().expect("fusion repository poisoned");
        if ops.contains_key(&descriptor.operator_id) {
            return Err(FusionError::DuplicateOperatorId(descriptor.operator_id));
        }
        let id = descriptor.operator_id.clone();
        ops.insert(
            id.clone(),
            OperatorHandle {
                descriptor: Arc::new(descriptor),
                implementation,
            },
        );
        Ok(id)
    }

    /// The lowest-id operator with the capability (and exact signature, when given).
    pub fn find_operator(
        &self,
        capability: &Capability,
        signature: Option<&Signature>,
    ) -> Result<OperatorHandle, FusionError> {
        let ops = self.operators.read().expect("fusion repository poisoned");
        ops.values()
            .find(|h| {
                h.descriptor.capability == *capability
                    && signature.is_none_or(|s| h.descriptor.signature == *s)
            })
            .cloned()
            .ok_or_else(|| FusionError::NoOperatorFound(capability.clone()))
    }

    pub fn get(&self, operator_id: &str) -> Option<OperatorHandle> {
        self.operators
            .read()
            .expect("fusion repository poisoned")
            .get(operator_id)
            .cloned()
    }

    pub fn apply(
        &self,
        operator_id: &str,
        inputs: &[Value],
        params: &Params,
    ) -> Result<Value, FusionError> {
        self.get(operator_id)
            .ok_or_else(|| FusionError::UnknownOperator(operator_id.to_string()))?
            .apply(inputs, params)
    }

    /// Descriptors ordered by operator id.
    pub fn descriptors(&self) -> Vec<OperatorDescriptor> {
        self.operators
            .read()
            .expect("fusion repository poisoned")
            .values()
            .map(|h| (*h.descriptor).clone())
            .collect()
    }
}

/// Evaluates an ordered rule list against attribute bindings.
///
/// The first rule whose conditions all hold determines the value. The first
/// ELSE value among the rules applies only when every rule is definitely
/// false, i.e. each condition of each rule evaluated on known inputs and at
/// least one failed. An unknown input anywhere blocks the ELSE branch, so the
/// result is unknown.
pub fn evaluate_rules(rules: &[Rule], bindings: &BTreeMap<AttributeName, Value>) -> Value {
    let mut all_false = true;
    for rule in rules {
        let results: Vec<Option<bool>> = rule
            .conditions
            .iter()
            .map(|c| c.evaluate(bindings))
            .collect();
        if results.iter().all(|r| *r == Some(true)) {
            return rule.consequent.value.to_value();
        }
        if results.iter().any(Option::is_none) {
            all_false = false;
        }
    }
    if all_false {
        if let Some(e) = rules.iter().find_map(|r| r.else_value.as_ref()) {
            return e.to_value();
        }
    }
    Value::Unknown
}

/// Mean of the samples in the trailing window ending at the newest sample.
pub fn window_average(series: &[(u64, Number)], window_ms: u64) -> Value {
    let now = series.iter().map(|(t, _)| *t).max().unwrap_or(0);
    window_average_at(series, window_ms, now)
}

/// Mean of the samples in `(now - window_ms, now]`; unknown when empty.
pub fn window_average_at(series: &[(u64, Number)], window_ms: u64, now: u64) -> Value {
    numeric::window_mean(series, window_ms, now).map_or(Value::Unknown, Value::Number)
}

fn param_number(params: &Params, name: &str) -> Option<Number> {
    match params.get(name) {
        Some(Param::Number(n)) => Some(*n),
        _ => None,
    }
}

fn param_numbers<'a>(params: &'a Params, name: &str) -> Option<&'a [Number]> {
    match params.get(name) {
        Some(Param::Numbers(ns)) => Some(ns),
        _ => None,
    }
}

fn bad_param(operator_id: &str, param: &str, message: impl Into<String>) -> FusionError {
    FusionError::InvalidParams {
        operator_id: operator_id.into(),
        param: param.into(),
        message: message.into(),
    }
}

fn timestamps(
    operator_id: &str,
    params: &Params,
    n: usize,
) -> Result<Option<Vec<u64>>, FusionError> {
    match param_numbers(params, "timestamps") {
        None => Ok(None),
        Some(ts) if ts.len() == n => Ok(Some(ts.iter().map(|t| *t as u64).collect())),
        Some(ts) => Err(bad_param(
            operator_id,
            "timestamps",
            format!("{} timestamps for {n} inputs", ts.len()),
        )),
    }
}

pub const COMPARE_ID: &str = "builtin.compare";
pub const LOGICAL_AND_ID: &str = "builtin.logical-and";
pub const LOGICAL_OR_ID: &str = "builtin.logical-or";
pub const RULE_EVAL_ID: &str = "builtin.rule-eval";
pub const WINDOW_AVERAGE_ID: &str = "builtin.window-average";
pub const LATEST_VALUE_ID: &str = "builtin.latest-value";
pub const IMPUTE_LINEAR_ID: &str = "builtin.impute-linear";

fn compare_op(inputs: &[Value], params: &Params) -> Result<Value, FusionError> {
    let op: Comparator = match params.get("op") {
        Some(Param::Text(s)) => s
            .parse()
            .map_err(|e: String| bad_param(COMPARE_ID, "op", e))?,
        _ => return Err(bad_param(COMPARE_ID, "op", "missing")),
    };
    Ok(op
        .holds(&inputs[0], &inputs[1])
        .map_or(Value::Unknown, Value::Boolean))
}

fn logical(all: bool) -> impl Fn(&[Value], &Params) -> Result<Value, FusionError> {
    move |inputs, _| {
        let mut it = inputs.iter().filter_map(Value::as_bool);
        Ok(Value::Boolean(if all {
            it.all(|b| b)
        } else {
            it.any(|b| b)
        }))
    }
}

fn rule_eval_op(inputs: &[Value], params: &Params) -> Result<Value, FusionError> {
    let Some(Param::Rules(rules)) = params.get("rules") else {
        return Err(bad_param(RULE_EVAL_ID, "rules", "missing"));
    };
    let Some(Param::Names(names)) = params.get("inputs") else {
        return Err(bad_param(RULE_EVAL_ID, "inputs", "missing"));
    };
    if names.len() != inputs.len() {
        return Err(FusionError::ArityMismatch {
            operator_id: RULE_EVAL_ID.into(),
            expected: names.len().to_string(),
            got: inputs.len(),
        });
    }
    let bindings = names.iter().cloned().zip(inputs.iter().cloned()).collect();
    Ok(evaluate_rules(rules, &bindings))
}

fn window_average_op(inputs: &[Value], params: &Params) -> Result<Value, FusionError> {
    let values: Vec<Number> = inputs.iter().filter_map(Value::as_number).collect();
    let Some(ts) = timestamps(WINDOW_AVERAGE_ID, params, inputs.len())? else {
        return Ok(numeric::mean(values).map_or(Value::Unknown, Value::Number));
    };
    let window = param_number(params, "window_ms")
        .ok_or_else(|| bad_param(WINDOW_AVERAGE_ID, "window_ms", "missing"))?;
    if window <= 0.0 {
        return Err(bad_param(WINDOW_AVERAGE_ID, "window_ms", "must be > 0"));
    }
    let series: Vec<(u64, Number)> = ts.into_iter().zip(values).collect();
    Ok(match param_number(params, "now") {
        Some(now) => window_average_at(&series, window as u64, now as u64),
        None => window_average(&series, window as u64),
    })
}

fn latest_value_op(inputs: &[Value], params: &Params) -> Result<Value, FusionError> {
    let idx = match timestamps(LATEST_VALUE_ID, params, inputs.len())? {
        // Ties go to the later input.
        Some(ts) => ts
            .iter()
            .enumerate()
            .max_by_key(|(i, t)| (**t, *i))
            .map(|(i, _)| i)
            .unwrap_or(0),
        None => inputs.len() - 1,
    };
    Ok(inputs[idx].clone())
}

fn impute_linear_op(inputs: &[Value], params: &Params) -> Result<Value, FusionError> {
    let ts = timestamps(IMPUTE_LINEAR_ID, params, 2)?
        .ok_or_else(|| bad_param(IMPUTE_LINEAR_ID, "timestamps", "missing"))?;
    let at =
        param_number(params, "at").ok_or_else(|| bad_param(IMPUTE_LINEAR_ID, "at", "missing"))?;
    let (Some(v0), Some(v1)) = (inputs[0].as_number(), inputs[1].as_number()) else {
        return Ok(Value::Unknown);
    };
    Ok(numeric::interpolate((ts[0], v0), (ts[1], v1), at as u64)
        .map_or(Value::Unknown, Value::Number))
}

fn builtins() -> Vec<(OperatorDescriptor, Arc<dyn FusionOperator>)> {
    use KindSpec::{Any, Exact};
    let num = Exact(ValueKind::Number);
    let boolean = Exact(ValueKind::Boolean);
    let d = |id: &str, capability, signature, params, description: &str| OperatorDescriptor {
        operator_id: id.into(),
        capability,
        signature,
        params,
        description: description.into(),
    };
    vec![
        (
            d(
                COMPARE_ID,
                Capability::Compare,
                Signature::fixed(&[num, num], boolean),
                vec![ParamSpec::required("op", ParamKind::Text)],
                "exact numeric comparison",
            ),
            Arc::new(compare_op),
        ),
        (
            d(
                LOGICAL_AND_ID,
                Capability::LogicalAnd,
                Signature::variadic(boolean, boolean),
                vec![],
                "conjunction",
            ),
            Arc::new(logical(true)),
        ),
        (
            d(
                LOGICAL_OR_ID,
                Capability::LogicalOr,
                Signature::variadic(boolean, boolean),
                vec![],
                "disjunction",
            ),
            Arc::new(logical(false)),
        ),
        (
            d(
                RULE_EVAL_ID,
                Capability::RuleEval,
                Signature::variadic(Any, Any),
                vec![
                    ParamSpec::required("rules", ParamKind::Rules),
                    ParamSpec::required("inputs", ParamKind::Names),
                ],
                "first-match rule evaluation with ELSE fallback",
            ),
            Arc::new(rule_eval_op),
        ),
        (
            d(
                WINDOW_AVERAGE_ID,
                Capability::WindowAverage,
                Signature::variadic(num, num),
                vec![
                    ParamSpec::optional("timestamps", ParamKind::Numbers),
                    ParamSpec::optional("window_ms", ParamKind::Number),
                    ParamSpec::optional("now", ParamKind::Number),
                ],
                "trailing-window arithmetic mean",
            ),
            Arc::new(window_average_op),
        ),
        (
            d(
                LATEST_VALUE_ID,
                Capability::LatestValue,
                Signature::variadic(Any, Any),
                vec![ParamSpec::optional("timestamps", ParamKind::Numbers)],
                "newest sample wins",
            ),
            Arc::new(latest_value_op),
        ),
        (
            d(
                IMPUTE_LINEAR_ID,
                Capability::ImputeLinear,
                Signature::fixed(&[num, num], num),
                vec![
                    ParamSpec::required("timestamps", ParamKind::Numbers),
                    ParamSpec::required("at", ParamKind::Number),
                ],
                "linear interpolation between bracketing readings; no extrapolation",
            ),
            Arc::new(impute_linear_op),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn repo() -> FusionRepository {
        FusionRepository::with_builtins()
    }

    #[test]
    fn compare_less_than() {
        let v = repo()
            .apply(
                COMPARE_ID,
                &[Value::Number(10.0), Value::Number(12.0)],
                &params([("op", Param::Text("<".into()))]),
            )
            .unwrap();
        assert_eq!(v, Value::Boolean(true));
    }

    #[test]
    fn logical_and_false() {
        let v = repo()
            .apply(
                LOGICAL_AND_ID,
                &[Value::Boolean(true), Value::Boolean(false)],
                &Params::new(),
            )
            .unwrap();
        assert_eq!(v, Value::Boolean(false));
    }

    #[test]
    fn impute_midpoint() {
        let v = repo()
            .apply(
                IMPUTE_LINEAR_ID,
                &[Value::Number(0.0), Value::Number(10.0)],
                &params([
                    ("timestamps", Param::Numbers(vec![0.0, 10.0])),
                    ("at", Param::Number(5.0)),
                ]),
            )
            .unwrap();
        assert_eq!(v, Value::Number(5.0));
    }

    #[test]
    fn impute_does_not_extrapolate() {
        let v = repo()
            .apply(
                IMPUTE_LINEAR_ID,
                &[Value::Number(0.0), Value::Number(10.0)],
                &params([
                    ("timestamps", Param::Numbers(vec![0.0, 10.0])),
                    ("at", Param::Number(15.0)),
                ]),
            )
            .unwrap();
        assert_eq!(v, Value::Unknown);
    }

    #[test]
    fn window_average_examples() {
        assert_eq!(
            window_average(&[(0, 2.0), (10, 4.0)], 1_000),
            Value::Number(3.0)
        );
        assert_eq!(window_average(&[], 1_000), Value::Unknown);
        assert_eq!(window_average(&[(5, 7.0)], 1_000), Value::Number(7.0));
        assert_eq!(window_average_at(&[(0, 2.0)], 1_000, 5_000), Value::Unknown);
    }

    #[test]
    fn find_builtin_by_capability_and_signature() {
        let r = repo();
        assert_eq!(
            r.find_operator(&Capability::RuleEval, None)
                .unwrap()
                .descriptor()
                .operator_id,
            RULE_EVAL_ID
        );
        let sig = Signature::fixed(
            &[
                KindSpec::Exact(ValueKind::Number),
                KindSpec::Exact(ValueKind::Number),
            ],
            KindSpec::Exact(ValueKind::Boolean),
        );
        assert_eq!(
            r.find_operator(&Capability::Compare, Some(&sig))
                .unwrap()
                .descriptor()
                .operator_id,
            COMPARE_ID
        );
        assert_eq!(
            r.find_operator(&Capability::from("kalman"), None)
                .unwrap_err(),
            FusionError::NoOperatorFound(Capability::Other("kalman".into()))
        );
    }

    #[test]
    fn duplicate_and_mismatched_registrations() {
        let r = repo();
        let d = r.get(COMPARE_ID).unwrap().descriptor().clone();
        assert_eq!(
            r.register_operator(d.clone(), Arc::new(compare_op))
                .unwrap_err(),
            FusionError::DuplicateOperatorId(COMPARE_ID.into())
        );
        let mut three = d;
        three.operator_id = "plugin.compare3".into();
        three.signature = Signature::fixed(
            &[KindSpec::Exact(ValueKind::Number); 3],
            KindSpec::Exact(ValueKind::Boolean),
        );
        assert!(matches!(
            r.register_operator(three, Arc::new(compare_op)),
            Err(FusionError::SignatureMismatch { .. })
        ));
    }

    #[test]
    fn lowest_id_wins_among_same_capability() {
        let r = repo();
        let mut d = r.get(COMPARE_ID).unwrap().descriptor().clone();
        d.operator_id = "a.compare".into();
        r.register_operator(d, Arc::new(compare_op)).unwrap();
        assert_eq!(
            r.find_operator(&Capability::Compare, None)
                .unwrap()
                .descriptor()
                .operator_id,
            "a.compare"
        );
    }

    #[test]
    fn arity_and_kind_checks() {
        let r = repo();
        assert!(matches!(
            r.apply(
                COMPARE_ID,
                &[Value::Number(1.0)],
                &params([("op", Param::Text("<".into()))])
            ),
            Err(FusionError::ArityMismatch { .. })
        ));
        assert!(matches!(
            r.apply(
                COMPARE_ID,
                &[Value::Number(1.0), Value::text("x")],
                &params([("op", Param::Text("<".into()))])
            ),
            Err(FusionError::KindMismatch { index: 1, .. })
        ));
        assert!(matches!(
            r.apply(
                COMPARE_ID,
                &[Value::Number(1.0), Value::Number(2.0)],
                &Params::new()
            ),
            Err(FusionError::InvalidParams { .. })
        ));
    }

    #[test]
    fn latest_value_prefers_newest_timestamp() {
        let v = repo()
            .apply(
                LATEST_VALUE_ID,
                &[Value::Number(1.0), Value::Number(2.0), Value::Number(3.0)],
                &params([("timestamps", Param::Numbers(vec![10.0, 30.0, 20.0]))]),
            )
            .unwrap();
        assert_eq!(v, Value::Number(2.0));
    }
}
