//! SLA model, policy repository, decision point and enforcement point.
//!
//! A run starts from an [`Sla`] (possibly a soft natural-language label),
//! picks one policy per [`PolicyKind`] at the decision point, then applies
//! the chosen actions to a [`ConfigRegistry`] that the engines read.
//! Conditions may also consult an [`InfoBase`] of typed runtime properties.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::SchedulerKind;
use crate::resource::{AllocationCostParams, QuorumLevel, ResourceSelection};
use crate::workflow::ServiceLevel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unknown soft requirement label `{0}`")]
    UnknownLabel(String),
    #[error("SLA of user `{0}` needs either soft_label or resource_level, performance and service_level")]
    IncompleteSla(String),
    #[error("SLA of user `{0}` still carries a soft label; expand it first")]
    NotExpanded(String),
    #[error("no policy of kind {0} matches")]
    NoMatchingPolicy(PolicyKind),
    #[error("policy `{id}`: {reason}")]
    InvalidPolicy { id: String, reason: String },
    #[error("duplicate policy id `{0}`")]
    DuplicatePolicy(String),
    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),
    #[error("invalid value {value} for config key `{key}`: {reason}")]
    InvalidConfigValue { key: String, value: Scalar, reason: String },
    #[error("unknown property `{0}`")]
    UnknownKey(String),
    #[error("property `{key}` holds {expected} values, got {found}")]
    TypeMismatch {
        key: String,
        expected: ScalarType,
        found: ScalarType,
    },
}

fn parse_doc<T: DeserializeOwned>(document: &str) -> Result<T, PolicyError> {
    let mut de = serde_json::Deserializer::from_str(document);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| PolicyError::Schema {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    de.end().map_err(|e| PolicyError::Schema {
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

/// A typed scalar as it appears in policy literals, properties and config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    Bool,
    Int,
    Real,
    Str,
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarType::Bool => "boolean",
            ScalarType::Int => "integer",
            ScalarType::Real => "real",
            ScalarType::Str => "string",
        })
    }
}

impl Scalar {
    pub fn ty(&self) -> ScalarType {
        match self {
            Scalar::Bool(_) => ScalarType::Bool,
            Scalar::Int(_) => ScalarType::Int,
            Scalar::Real(_) => ScalarType::Real,
            Scalar::Str(_) => ScalarType::Str,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Integers are accepted where reals are declared.
    fn fits(&self, ty: ScalarType) -> bool {
        self.ty() == ty || (ty == ScalarType::Real && self.ty() == ScalarType::Int)
    }

    fn coerce(self, ty: ScalarType) -> Scalar {
        match (self, ty) {
            (Scalar::Int(i), ScalarType::Real) => Scalar::Real(i as f64),
            (v, _) => v,
        }
    }

    fn compare(&self, other: &Scalar) -> Option<Ordering> {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => Some(a.cmp(b)),
            (Scalar::Str(a), Scalar::Str(b)) => Some(a.cmp(b)),
            (Scalar::Bool(a), Scalar::Bool(b)) if a == b => Some(Ordering::Equal),
            _ => self.as_f64()?.partial_cmp(&other.as_f64()?),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Real(r) => write!(f, "{r}"),
            Scalar::Str(s) => write!(f, "\"{s}\""),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Str(s.to_string())
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

impl From<i64> for Scalar {
    fn from(i: i64) -> Self {
        Scalar::Int(i)
    }
}

impl From<f64> for Scalar {
    fn from(r: f64) -> Self {
        Scalar::Real(r)
    }
}

/// Required low-level workflow performance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Performance {
    Fast,
    Standard,
    Economy,
}

impl Performance {
    pub fn as_str(self) -> &'static str {
        match self {
            Performance::Fast => "Fast",
            Performance::Standard => "Standard",
            Performance::Economy => "Economy",
        }
    }
}

/// Per-user requirement triple: resource set level, low-level workflow
/// performance and application service level, or a soft label that
/// expands into all three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sla {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_level: Option<QuorumLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance: Option<Performance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_level: Option<ServiceLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_label: Option<String>,
}

impl Sla {
    pub fn explicit(
        user_id: impl Into<String>,
        resource_level: QuorumLevel,
        performance: Performance,
        service_level: ServiceLevel,
    ) -> Self {
        Sla {
            user_id: user_id.into(),
            resource_level: Some(resource_level),
            performance: Some(performance),
            service_level: Some(service_level),
            soft_label: None,
        }
    }

    pub fn soft(user_id: impl Into<String>, label: impl Into<String>) -> Self {
        Sla {
            user_id: user_id.into(),
            resource_level: None,
            performance: None,
            service_level: None,
            soft_label: Some(label.into()),
        }
    }

    fn field(&self, key: &str) -> Option<Scalar> {
        match key {
            "user_id" => Some(Scalar::Str(self.user_id.clone())),
            "resource_level" => self.resource_level.map(|l| l.as_str().into()),
            "performance" => self.performance.map(|p| p.as_str().into()),
            "service_level" => self.service_level.map(|s| s.as_str().into()),
            _ => None,
        }
    }
}

pub const SLA_CONDITION_KEYS: [&str; 4] = ["user_id", "resource_level", "performance", "service_level"];

pub fn parse_sla(document: &str) -> Result<Sla, PolicyError> {
    let sla: Sla = parse_doc(document)?;
    let complete = sla.resource_level.is_some() && sla.performance.is_some() && sla.service_level.is_some();
    if sla.soft_label.is_none() && !complete {
        return Err(PolicyError::IncompleteSla(sla.user_id));
    }
    Ok(sla)
}

/// Resolves a soft requirement label into explicit fields. Fields already
/// present are kept.
pub fn expand_soft_label(sla: &Sla) -> Result<Sla, PolicyError> {
    let Some(label) = &sla.soft_label else {
        let complete = sla.resource_level.is_some() && sla.performance.is_some() && sla.service_level.is_some();
        return if complete {
            Ok(sla.clone())
        } else {
            Err(PolicyError::IncompleteSla(sla.user_id.clone()))
        };
    };
    let (level, perf, service) = match label.as_str() {
        "High Performance" => (QuorumLevel::L1, Performance::Fast, ServiceLevel::EcgVhs),
        "Balanced" => (QuorumLevel::L2, Performance::Standard, ServiceLevel::EcgDetect),
        "Low Cost" => (QuorumLevel::L3, Performance::Economy, ServiceLevel::EcgOnly),
        _ => return Err(PolicyError::UnknownLabel(label.clone())),
    };
    Ok(Sla {
        user_id: sla.user_id.clone(),
        resource_level: Some(sla.resource_level.unwrap_or(level)),
        performance: Some(sla.performance.unwrap_or(perf)),
        service_level: Some(sla.service_level.unwrap_or(service)),
        soft_label: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    Resource,
    LowLevelWorkflow,
    AppService,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicate {
    pub key: String,
    pub op: Op,
    pub value: Scalar,
}

impl Predicate {
    pub fn new(key: impl Into<String>, op: Op, value: impl Into<Scalar>) -> Self {
        Predicate {
            key: key.into(),
            op,
            value: value.into(),
        }
    }

    fn holds(&self, actual: &Scalar) -> bool {
        let ord = actual.compare(&self.value);
        match self.op {
            Op::Eq => ord == Some(Ordering::Equal),
            Op::Ne => ord != Some(Ordering::Equal),
            Op::Le => matches!(ord, Some(Ordering::Less | Ordering::Equal)),
            Op::Ge => matches!(ord, Some(Ordering::Greater | Ordering::Equal)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub key: String,
    pub value: Scalar,
}

impl Action {
    pub fn new(key: impl Into<String>, value: impl Into<Scalar>) -> Self {
        Action {
            key: key.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    pub id: String,
    pub kind: PolicyKind,
    pub priority: i64,
    #[serde(default)]
    pub condition: Vec<Predicate>,
    pub actions: Vec<Action>,
}

impl Policy {
    /// True when every predicate of the conjunction holds.
    pub fn matches(&self, sla: &Sla, info: &InfoBase) -> bool {
        self.condition.iter().all(|p| {
            let actual = sla.field(&p.key).or_else(|| info.property_get(&p.key).ok());
            actual.is_some_and(|a| p.holds(&a))
        })
    }
}

/// Parses a repository document and checks every policy against the SLA
/// fields and the property schema of `info`.
pub fn parse_repository(document: &str, info: &InfoBase) -> Result<Vec<Policy>, PolicyError> {
    let repo: Vec<Policy> = parse_doc(document)?;
    check_repository(&repo, info)?;
    Ok(repo)
}

pub fn check_repository(repo: &[Policy], info: &InfoBase) -> Result<(), PolicyError> {
    let mut ids = HashSet::new();
    for p in repo {
        let invalid = |reason: String| PolicyError::InvalidPolicy {
            id: p.id.clone(),
            reason,
        };
        if !ids.insert(p.id.as_str()) {
            return Err(PolicyError::DuplicatePolicy(p.id.clone()));
        }
        if p.actions.is_empty() {
            return Err(invalid("a policy needs at least one action".into()));
        }
        for pred in &p.condition {
            let declared = if SLA_CONDITION_KEYS.contains(&pred.key.as_str()) {
                ScalarType::Str
            } else {
                match info.declared_type(&pred.key) {
                    Some(ty) => ty,
                    None => return Err(invalid(format!("condition key `{}` is not declared", pred.key))),
                }
            };
            if !pred.value.fits(declared) {
                return Err(invalid(format!(
                    "condition on `{}` compares a {} with a {} literal",
                    pred.key,
                    declared,
                    pred.value.ty()
                )));
            }
        }
    }
    Ok(())
}

/// The decided policy set of one user: application, resource and
/// low-level workflow policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySet {
    pub app: Policy,
    pub resource: Policy,
    pub workflow: Policy,
}

impl PolicySet {
    /// Policies in enforcement order.
    pub fn in_order(&self) -> [&Policy; 3] {
        [&self.app, &self.resource, &self.workflow]
    }

    pub fn ids(&self) -> PolicySetIds {
        PolicySetIds {
            app: self.app.id.clone(),
            resource: self.resource.id.clone(),
            workflow: self.workflow.id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySetIds {
    pub app: String,
    pub resource: String,
    pub workflow: String,
}

/// Policy decision point: per kind, the satisfied policy with the highest
/// priority; equal priorities go to the smallest id.
pub fn decide_policy(sla: &Sla, repo: &[Policy], info: &InfoBase) -> Result<PolicySet, PolicyError> {
    if sla.soft_label.is_some() {
        return Err(PolicyError::NotExpanded(sla.user_id.clone()));
    }
    let pick = |kind: PolicyKind| -> Result<Policy, PolicyError> {
        repo.iter()
            .filter(|p| p.kind == kind && p.matches(sla, info))
            .min_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.id.cmp(&b.id)))
            .cloned()
            .ok_or(PolicyError::NoMatchingPolicy(kind))
    };
    Ok(PolicySet {
        app: pick(PolicyKind::AppService)?,
        resource: pick(PolicyKind::Resource)?,
        workflow: pick(PolicyKind::LowLevelWorkflow)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertySource {
    Static,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyRecord {
    pub key: String,
    pub value: Scalar,
    pub source: PropertySource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertySpec {
    pub key: String,
    pub ty: ScalarType,
    pub default: Scalar,
}

impl PropertySpec {
    pub fn new(key: &str, default: impl Into<Scalar>) -> Self {
        let default = default.into();
        PropertySpec {
            key: key.to_string(),
            ty: default.ty(),
            default,
        }
    }
}

/// Typed key-value store of auxiliary properties consulted by policy
/// conditions. Keys and their types are fixed by the schema.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoBase {
    schema: BTreeMap<String, PropertySpec>,
    overrides: BTreeMap<String, Scalar>,
}

impl Default for InfoBase {
    fn default() -> Self {
        InfoBase::with_schema(vec![
            PropertySpec::new("grid.alert", false),
            PropertySpec::new("grid.maintenance", false),
            PropertySpec::new("grid.load", 0.0),
        ])
    }
}

impl InfoBase {
    pub fn with_schema(specs: Vec<PropertySpec>) -> Self {
        InfoBase {
            schema: specs.into_iter().map(|s| (s.key.clone(), s)).collect(),
            overrides: BTreeMap::new(),
        }
    }

    pub fn declared_type(&self, key: &str) -> Option<ScalarType> {
        self.schema.get(key).map(|s| s.ty)
    }

    pub fn property_get(&self, key: &str) -> Result<Scalar, PolicyError> {
        let spec = self
            .schema
            .get(key)
            .ok_or_else(|| PolicyError::UnknownKey(key.to_string()))?;
        Ok(self.overrides.get(key).unwrap_or(&spec.default).clone())
    }

    /// Replaces the value and returns the previous one.
    pub fn property_set(&mut self, key: &str, value: impl Into<Scalar>) -> Result<Scalar, PolicyError> {
        let value = value.into();
        let spec = self
            .schema
            .get(key)
            .ok_or_else(|| PolicyError::UnknownKey(key.to_string()))?;
        if !value.fits(spec.ty) {
            return Err(PolicyError::TypeMismatch {
                key: key.to_string(),
                expected: spec.ty,
                found: value.ty(),
            });
        }
        let previous = self.property_get(key)?;
        self.overrides.insert(key.to_string(), value.coerce(spec.ty));
        Ok(previous)
    }

    pub fn records(&self) -> Vec<PropertyRecord> {
        self.schema
            .values()
            .map(|spec| match self.overrides.get(&spec.key) {
                Some(v) => PropertyRecord {
                    key: spec.key.clone(),
                    value: v.clone(),
                    source: PropertySource::Runtime,
                },
                None => PropertyRecord {
                    key: spec.key.clone(),
                    value: spec.default.clone(),
                    source: PropertySource::Static,
                },
            })
            .collect()
    }
}

pub const DEFAULT_PROVENANCE: &str = "default";

/// Value constraint of one registered config key.
#[derive(Debug, Clone, Copy)]
enum KeyRule {
    OneOf(&'static [&'static str]),
    NonNegativeReal,
    PositiveReal,
    NonNegativeInt,
    PositiveInt,
}

struct KeySpec {
    key: &'static str,
    rule: KeyRule,
    default: fn() -> Scalar,
}

const CONFIG_SCHEMA: &[KeySpec] = &[
    KeySpec {
        key: "resource.level",
        rule: KeyRule::OneOf(&["L1", "L2", "L3", "Random"]),
        default: || Scalar::from("L2"),
    },
    KeySpec {
        key: "resource.alpha",
        rule: KeyRule::NonNegativeReal,
        default: || Scalar::Real(0.5),
    },
    KeySpec {
        key: "resource.beta",
        rule: KeyRule::NonNegativeReal,
        default: || Scalar::Real(0.5),
    },
    KeySpec {
        key: "scheduler.kind",
        rule: KeyRule::OneOf(&["MinEFT", "RoundRobin", "Random"]),
        default: || Scalar::from("MinEFT"),
    },
    KeySpec {
        key: "scheduler.seed",
        rule: KeyRule::NonNegativeInt,
        default: || Scalar::Int(0),
    },
    KeySpec {
        key: "app.workflow",
        rule: KeyRule::OneOf(&["EcgOnly", "EcgDetect", "EcgVhs"]),
        default: || Scalar::from("EcgVhs"),
    },
    KeySpec {
        key: "app.vhs_trigger",
        rule: KeyRule::OneOf(&["symptom", "always"]),
        default: || Scalar::from("symptom"),
    },
    KeySpec {
        key: "vhs.max_iter",
        rule: KeyRule::PositiveInt,
        default: || Scalar::Int(5),
    },
    KeySpec {
        key: "vhs.tolerance",
        rule: KeyRule::PositiveReal,
        default: || Scalar::Real(0.05),
    },
];

/// Registered config keys, in schema order.
pub fn config_keys() -> impl Iterator<Item = &'static str> {
    CONFIG_SCHEMA.iter().map(|s| s.key)
}

fn check_config_value(key: &str, value: &Scalar) -> Result<Scalar, PolicyError> {
    let spec = CONFIG_SCHEMA
        .iter()
        .find(|s| s.key == key)
        .ok_or_else(|| PolicyError::UnknownConfigKey(key.to_string()))?;
    let bad = |reason: &str| PolicyError::InvalidConfigValue {
        key: key.to_string(),
        value: value.clone(),
        reason: reason.to_string(),
    };
    match spec.rule {
        KeyRule::OneOf(options) => match value.as_str() {
            Some(s) if options.contains(&s) => Ok(value.clone()),
            _ => Err(bad(&format!("expected one of {options:?}"))),
        },
        KeyRule::NonNegativeReal | KeyRule::PositiveReal => {
            let x = value
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad("expected a number"))?;
            let ok = match spec.rule {
                KeyRule::PositiveReal => x > 0.0,
                _ => x >= 0.0,
            };
            if ok {
                Ok(Scalar::Real(x))
            } else {
                Err(bad("out of range"))
            }
        }
        KeyRule::NonNegativeInt | KeyRule::PositiveInt => match value {
            Scalar::Int(i) if *i > 0 || (*i == 0 && matches!(spec.rule, KeyRule::NonNegativeInt)) => Ok(value.clone()),
            Scalar::Int(_) => Err(bad("out of range")),
            _ => Err(bad("expected an integer")),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub value: Scalar,
    pub provenance: String,
}

/// Runtime configuration read by the engines. Every entry records the
/// policy that set it, or `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigRegistry {
    entries: BTreeMap<String, ConfigEntry>,
}

impl Default for ConfigRegistry {
    fn default() -> Self {
        ConfigRegistry::with_defaults()
    }
}

impl ConfigRegistry {
    pub fn with_defaults() -> Self {
        ConfigRegistry {
            entries: CONFIG_SCHEMA
                .iter()
                .map(|s| {
                    (
                        s.key.to_string(),
                        ConfigEntry {
                            value: (s.default)(),
                            provenance: DEFAULT_PROVENANCE.to_string(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&ConfigEntry> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ConfigEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Sets a registered key directly, bypassing policies.
    pub fn set(&mut self, key: &str, value: impl Into<Scalar>, provenance: &str) -> Result<(), PolicyError> {
        let value = check_config_value(key, &value.into())?;
        self.entries.insert(
            key.to_string(),
            ConfigEntry {
                value,
                provenance: provenance.to_string(),
            },
        );
        Ok(())
    }

    pub fn is_default(&self, key: &str) -> bool {
        self.entries.get(key).is_none_or(|e| e.provenance == DEFAULT_PROVENANCE)
    }

    fn value(&self, key: &str) -> &Scalar {
        &self.entries.get(key).expect("registered key present").value
    }

    fn text(&self, key: &str) -> &str {
        self.value(key).as_str().expect("validated string key")
    }

    fn int(&self, key: &str) -> i64 {
        match self.value(key) {
            Scalar::Int(i) => *i,
            other => panic!("config key {key} holds non-integer {other}"),
        }
    }

    pub fn resource_selection(&self) -> ResourceSelection {
        self.text("resource.level").parse().expect("validated level")
    }

    pub fn cost_params(&self) -> Result<AllocationCostParams, PolicyError> {
        let alpha = self.value("resource.alpha").as_f64().unwrap_or(0.0);
        let beta = self.value("resource.beta").as_f64().unwrap_or(0.0);
        AllocationCostParams::new(alpha, beta).map_err(|_| PolicyError::InvalidConfigValue {
            key: "resource.alpha".into(),
            value: Scalar::Real(alpha),
            reason: format!("alpha + beta must be positive (beta = {beta})"),
        })
    }

    pub fn scheduler(&self) -> SchedulerKind {
        self.text("scheduler.kind").parse().expect("validated scheduler")
    }

    pub fn scheduler_seed(&self) -> u64 {
        self.int("scheduler.seed") as u64
    }

    pub fn app_workflow(&self) -> ServiceLevel {
        ServiceLevel::parse(self.text("app.workflow")).expect("validated service level")
    }

    pub fn vhs_always(&self) -> bool {
        self.text("app.vhs_trigger") == "always"
    }

    pub fn vhs_max_iter(&self) -> u32 {
        self.int("vhs.max_iter").clamp(1, u32::MAX as i64) as u32
    }

    pub fn vhs_tolerance(&self) -> f64 {
        self.value("vhs.tolerance").as_f64().expect("validated tolerance")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppliedAction {
    pub policy: String,
    pub key: String,
    pub value: Scalar,
}

/// A key written by an earlier policy of the same enforcement pass and then
/// overwritten by a later one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Override {
    pub key: String,
    pub overridden_policy: String,
    pub overridden_value: Scalar,
    pub policy: String,
    pub value: Scalar,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnforcementReport {
    pub applied: Vec<AppliedAction>,
    pub overrides: Vec<Override>,
}

/// Policy enforcement point. Applies app, resource then workflow actions;
/// the last writer of a key wins. Nothing is written if any action is
/// invalid.
pub fn enforce(set: &PolicySet, registry: &mut ConfigRegistry) -> Result<EnforcementReport, PolicyError> {
    let mut staged = Vec::new();
    for policy in set.in_order() {
        for action in &policy.actions {
            let value = check_config_value(&action.key, &action.value)?;
            staged.push((policy.id.as_str(), action.key.as_str(), value));
        }
    }

    let mut report = EnforcementReport::default();
    let mut written: BTreeMap<&str, (&str, Scalar)> = BTreeMap::new();
    for (policy, key, value) in staged {
        if let Some((prev_policy, prev_value)) = written.get(key) {
            report.overrides.push(Override {
                key: key.to_string(),
                overridden_policy: prev_policy.to_string(),
                overridden_value: prev_value.clone(),
                policy: policy.to_string(),
                value: value.clone(),
            });
        }
        registry.entries.insert(
            key.to_string(),
            ConfigEntry {
                value: value.clone(),
                provenance: policy.to_string(),
            },
        );
        report.applied.push(AppliedAction {
            policy: policy.to_string(),
            key: key.to_string(),
            value: value.clone(),
        });
        written.insert(key, (policy, value));
    }
    Ok(report)
}
