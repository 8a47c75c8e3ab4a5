//! Formalized intents: object scope plus target KPIs.
//!
//! The document layout is a single JSON object:
//!
//! ```json
//! {
//!   "objectInstance": "SubNetwork_1",
//!   "ObjectTarget": ["Cell_7"],
//!   "targets": [{
//!     "targetName": "RANEnergyEfficiency",
//!     "targetCondition": "IS_GREATER_THAN",
//!     "targetValue": "800000",
//!     "targetUnit": "bit/joule"
//!   }]
//! }
//! ```
//!
//! An optional `intentId` key may follow `targets`. When absent the id is
//! derived from the document content, so the same intent always gets the
//! same id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::Hasher;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// KPI name carried by `PEE.EnergyEfficiency` PM reports.
pub const RAN_ENERGY_EFFICIENCY: &str = "RANEnergyEfficiency";

/// KPIs the O1 PM stream can report in this release.
pub const SUPPORTED_KPIS: &[&str] = &[RAN_ENERGY_EFFICIENCY];

pub const ENERGY_EFFICIENCY_UNIT: &str = "bit/joule";

const KNOWN_KEYS: &[&str] = &["objectInstance", "ObjectTarget", "targets", "intentId"];
const KNOWN_TARGET_KEYS: &[&str] = &["targetName", "targetCondition", "targetValue", "targetUnit"];

#[derive(Debug, Error, PartialEq)]
pub enum IntentError {
    #[error("intent document is not valid JSON: {0}")]
    Syntax(String),
    #[error("intent schema violation: {0}")]
    Schema(String),
}

fn schema(msg: impl Into<String>) -> IntentError {
    IntentError::Schema(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TargetCondition {
    IsGreaterThan,
    IsLessThan,
    IsEqualTo,
}

impl TargetCondition {
    pub const ALL: [TargetCondition; 3] = [
        TargetCondition::IsGreaterThan,
        TargetCondition::IsLessThan,
        TargetCondition::IsEqualTo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetCondition::IsGreaterThan => "IS_GREATER_THAN",
            TargetCondition::IsLessThan => "IS_LESS_THAN",
            TargetCondition::IsEqualTo => "IS_EQUAL_TO",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for TargetCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Network elements an intent applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectScope {
    object_instance: String,
    object_targets: Vec<String>,
}

impl ObjectScope {
    pub fn new(object_instance: impl Into<String>, object_targets: Vec<String>) -> Result<Self, IntentError> {
        let object_instance = object_instance.into();
        if object_instance.trim().is_empty() {
            return Err(schema("objectInstance must be a non-empty identifier"));
        }
        if object_targets.is_empty() {
            return Err(schema("ObjectTarget must list at least one cell"));
        }
        let mut seen = BTreeSet::new();
        for cell in &object_targets {
            if !is_cell_identifier(cell) {
                return Err(schema(format!(
                    "ObjectTarget entry {cell:?} does not match Cell_<positive integer>"
                )));
            }
            if !seen.insert(cell.as_str()) {
                return Err(schema(format!("ObjectTarget lists {cell:?} more than once")));
            }
        }
        Ok(Self {
            object_instance,
            object_targets,
        })
    }

    pub fn object_instance(&self) -> &str {
        &self.object_instance
    }

    pub fn object_targets(&self) -> &[String] {
        &self.object_targets
    }

    /// The cell the loop drives; v1 handles exactly one.
    pub fn primary_cell(&self) -> &str {
        &self.object_targets[0]
    }
}

/// `Cell_<n>` with n a positive integer without leading zeros.
pub fn is_cell_identifier(s: &str) -> bool {
    match s.strip_prefix("Cell_") {
        Some(digits) => {
            !digits.is_empty()
                && digits.bytes().all(|b| b.is_ascii_digit())
                && !digits.starts_with('0')
        }
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetKpi {
    name: String,
    condition: TargetCondition,
    value: f64,
    unit: String,
}

impl TargetKpi {
    pub fn new(
        name: impl Into<String>,
        condition: TargetCondition,
        value: f64,
        unit: impl Into<String>,
    ) -> Result<Self, IntentError> {
        let name = name.into();
        let unit = unit.into();
        if name.trim().is_empty() {
            return Err(schema("targetName must be non-empty"));
        }
        if !value.is_finite() || value < 0.0 {
            return Err(schema(format!(
                "targetValue must be a finite non-negative number, got {value}"
            )));
        }
        if name == RAN_ENERGY_EFFICIENCY && unit != ENERGY_EFFICIENCY_UNIT {
            return Err(schema(format!(
                "targetUnit for {RAN_ENERGY_EFFICIENCY} must be {ENERGY_EFFICIENCY_UNIT:?}, got {unit:?}"
            )));
        }
        Ok(Self {
            name,
            condition,
            value,
            unit,
        })
    }

    /// Convenience constructor for the energy-efficiency KPI.
    pub fn energy_efficiency(condition: TargetCondition, value: f64) -> Result<Self, IntentError> {
        Self::new(RAN_ENERGY_EFFICIENCY, condition, value, ENERGY_EFFICIENCY_UNIT)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn condition(&self) -> TargetCondition {
        self.condition
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn is_met_by(&self, measured: f64) -> bool {
        evaluate_condition(self, measured)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intent {
    id: String,
    scope: ObjectScope,
    targets: Vec<TargetKpi>,
}

impl Intent {
    /// Builds an intent, deriving the id from content when `id` is `None`.
    pub fn new(scope: ObjectScope, targets: Vec<TargetKpi>, id: Option<String>) -> Result<Self, IntentError> {
        if targets.is_empty() {
            return Err(schema("targets must contain at least one TargetKpi"));
        }
        let mut names = BTreeSet::new();
        for t in &targets {
            if !names.insert(t.name()) {
                return Err(schema(format!("more than one target for KPI {:?}", t.name())));
            }
        }
        let mut intent = Self {
            id: String::new(),
            scope,
            targets,
        };
        intent.id = match id {
            Some(id) if !id.trim().is_empty() => id,
            Some(_) => return Err(schema("intentId must be non-empty when present")),
            None => intent.derived_id(),
        };
        Ok(intent)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn scope(&self) -> &ObjectScope {
        &self.scope
    }

    pub fn targets(&self) -> &[TargetKpi] {
        &self.targets
    }

    /// Returns a copy with every target value replaced, used by the
    /// experiment drivers to sweep targets on a template intent.
    pub fn with_target_value(&self, value: f64) -> Result<Self, IntentError> {
        let targets = self
            .targets
            .iter()
            .map(|t| TargetKpi::new(t.name.clone(), t.condition, value, t.unit.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Intent::new(self.scope.clone(), targets, None)
    }

    fn derived_id(&self) -> String {
        let mut h = fnv::FnvHasher::default();
        h.write(self.content_value().to_string().as_bytes());
        format!("intent-{:016x}", h.finish())
    }

    fn content_value(&self) -> Value {
        let mut doc = Map::new();
        doc.insert("objectInstance".into(), Value::from(self.scope.object_instance.clone()));
        doc.insert(
            "ObjectTarget".into(),
            Value::from(self.scope.object_targets.clone()),
        );
        let targets = self
            .targets
            .iter()
            .map(|t| {
                let mut m = Map::new();
                m.insert("targetName".into(), Value::from(t.name.clone()));
                m.insert("targetCondition".into(), Value::from(t.condition.as_str()));
                m.insert("targetValue".into(), Value::from(format_target_value(t.value)));
                m.insert("targetUnit".into(), Value::from(t.unit.clone()));
                Value::Object(m)
            })
            .collect::<Vec<_>>();
        doc.insert("targets".into(), Value::Array(targets));
        Value::Object(doc)
    }

    /// Intent body without the id, used inside prompts.
    pub fn render_body(&self) -> String {
        render_ordered(self, false)
    }
}

fn format_target_value(v: f64) -> String {
    // Display on f64 is the shortest representation that parses back exactly.
    format!("{v}")
}

/// A parse result with any non-fatal findings (unknown keys).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedIntent {
    pub intent: Intent,
    pub warnings: Vec<String>,
}

/// Parses an intent document, logging ignored keys.
pub fn parse_intent(text: &str) -> Result<Intent, IntentError> {
    let parsed = parse_intent_with_warnings(text)?;
    for w in &parsed.warnings {
        tracing::warn!("{w}");
    }
    Ok(parsed.intent)
}

pub fn parse_intent_with_warnings(text: &str) -> Result<ParsedIntent, IntentError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| IntentError::Syntax(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| schema("intent document must be a JSON object"))?;
    let mut warnings = Vec::new();
    for key in obj.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            warnings.push(format!("ignoring unknown intent field {key:?}"));
        }
    }

    let instance = required_str(obj, "objectInstance", "intent")?;
    let targets_raw = obj
        .get("ObjectTarget")
        .ok_or_else(|| schema("missing required field \"ObjectTarget\""))?
        .as_array()
        .ok_or_else(|| schema("\"ObjectTarget\" must be an array of strings"))?;
    let cells = targets_raw
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_owned)
                .ok_or_else(|| schema("\"ObjectTarget\" entries must be strings"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scope = ObjectScope::new(instance, cells)?;

    let kpis_raw = obj
        .get("targets")
        .ok_or_else(|| schema("missing required field \"targets\""))?
        .as_array()
        .ok_or_else(|| schema("\"targets\" must be an array of objects"))?;
    let mut kpis = Vec::with_capacity(kpis_raw.len());
    for (i, raw) in kpis_raw.iter().enumerate() {
        let t = raw
            .as_object()
            .ok_or_else(|| schema(format!("targets[{i}] must be an object")))?;
        for key in t.keys() {
            if !KNOWN_TARGET_KEYS.contains(&key.as_str()) {
                warnings.push(format!("ignoring unknown field {key:?} in targets[{i}]"));
            }
        }
        let ctx = format!("targets[{i}]");
        let name = required_str(t, "targetName", &ctx)?;
        let cond_raw = required_str(t, "targetCondition", &ctx)?;
        let condition = TargetCondition::parse(&cond_raw).ok_or_else(|| {
            let allowed: Vec<_> = TargetCondition::ALL.iter().map(|c| c.as_str()).collect();
            schema(format!(
                "{ctx}.targetCondition {cond_raw:?} is not one of [{}]",
                allowed.join(", ")
            ))
        })?;
        let value_raw = required_str(t, "targetValue", &ctx)?;
        let value: f64 = value_raw
            .trim()
            .parse()
            .map_err(|_| schema(format!("{ctx}.targetValue {value_raw:?} is not a number")))?;
        let unit = required_str(t, "targetUnit", &ctx)?;
        kpis.push(TargetKpi::new(name, condition, value, unit)?);
    }

    let id = match obj.get("intentId") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema("\"intentId\" must be a string")),
    };
    let intent = Intent::new(scope, kpis, id)?;
    Ok(ParsedIntent { intent, warnings })
}

fn required_str(obj: &Map<String, Value>, key: &str, ctx: &str) -> Result<String, IntentError> {
    match obj.get(key) {
        None => Err(schema(format!("{ctx}: missing required field {key:?}"))),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(schema(format!("{ctx}: field {key:?} must be a string, got {other}"))),
    }
}

/// Serializes an intent with keys in document order, `intentId` last.
pub fn render_intent(intent: &Intent) -> String {
    render_ordered(intent, true)
}

fn render_ordered(intent: &Intent, with_id: bool) -> String {
    #[derive(Serialize)]
    struct TargetDoc<'a> {
        #[serde(rename = "targetName")]
        name: &'a str,
        #[serde(rename = "targetCondition")]
        condition: &'a str,
        #[serde(rename = "targetValue")]
        value: String,
        #[serde(rename = "targetUnit")]
        unit: &'a str,
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        #[serde(rename = "objectInstance")]
        object_instance: &'a str,
        #[serde(rename = "ObjectTarget")]
        object_target: &'a [String],
        targets: Vec<TargetDoc<'a>>,
        #[serde(rename = "intentId", skip_serializing_if = "Option::is_none")]
        intent_id: Option<&'a str>,
    }
    let doc = Doc {
        object_instance: intent.scope.object_instance(),
        object_target: intent.scope.object_targets(),
        targets: intent
            .targets
            .iter()
            .map(|t| TargetDoc {
                name: &t.name,
                condition: t.condition.as_str(),
                value: format_target_value(t.value),
                unit: &t.unit,
            })
            .collect(),
        intent_id: with_id.then_some(intent.id.as_str()),
    };
    serde_json::to_string_pretty(&doc).expect("intent document serializes")
}

/// Relative tolerance for `IS_EQUAL_TO`.
pub const EQUALITY_REL_TOLERANCE: f64 = 1e-9;

pub fn evaluate_condition(target: &TargetKpi, measured: f64) -> bool {
    let value = target.value;
    match target.condition {
        TargetCondition::IsGreaterThan => measured > value,
        TargetCondition::IsLessThan => measured < value,
        TargetCondition::IsEqualTo => {
            (measured - value).abs() <= EQUALITY_REL_TOLERANCE * value.abs().max(1.0)
        }
    }
}

/// Cells of the simulated network as seen from the management side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NetworkTopology {
    pub subnetwork: String,
    pub cells: Vec<String>,
    /// Alternate names that resolve to a cell in `cells`.
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

impl NetworkTopology {
    pub fn resolve<'a>(&'a self, cell: &'a str) -> Option<&'a str> {
        if self.cells.iter().any(|c| c == cell) {
            Some(cell)
        } else {
            self.aliases.get(cell).map(String::as_str)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub message: String,
}

impl ValidationIssue {
    fn error(message: String) -> Self {
        Self {
            severity: Severity::Error,
            message,
        }
    }

    fn warning(message: String) -> Self {
        Self {
            severity: Severity::Warning,
            message,
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}", self.message)
    }
}

pub fn validate_intent(intent: &Intent, topology: &NetworkTopology) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    if intent.scope.object_instance() != topology.subnetwork {
        issues.push(ValidationIssue::error(format!(
            "unknown object instance {:?} (network exposes {:?})",
            intent.scope.object_instance(),
            topology.subnetwork
        )));
    }
    for cell in intent.scope.object_targets() {
        if topology.resolve(cell).is_none() {
            issues.push(ValidationIssue::error(format!("unknown cell {cell:?}")));
        }
    }
    if intent.scope.object_targets().len() > 1 {
        issues.push(ValidationIssue::warning(format!(
            "{} target cells listed; only {:?} is driven by the loop",
            intent.scope.object_targets().len(),
            intent.scope.primary_cell()
        )));
    }
    for t in &intent.targets {
        if !SUPPORTED_KPIS.contains(&t.name()) {
            issues.push(ValidationIssue::error(format!(
                "unsupported KPI {:?} (supported: {})",
                t.name(),
                SUPPORTED_KPIS.join(", ")
            )));
        }
    }
    issues
}
