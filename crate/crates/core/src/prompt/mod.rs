//! Five-section one-shot prompt construction and structured strategy
//! parsing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::agents::{HistoryAdvice, ObservationSnapshot};
use crate::intent::Intent;
use crate::o1::wire::split_object_path;

pub const INSTRUCTION: &str = "## Instruction";
pub const INTENT: &str = "## Intent";
pub const CURRENT_OBSERVATION: &str = "## Current Observation";
pub const CONFIGURATION_CONSTRAINTS: &str = "## Configuration Constraints";
pub const OUTPUT_FORMAT: &str = "## Output Format";

/// Section headers in the order they appear in every prompt.
pub const HEADERS: [&str; 5] = [
    INSTRUCTION,
    INTENT,
    CURRENT_OBSERVATION,
    CONFIGURATION_CONSTRAINTS,
    OUTPUT_FORMAT,
];

const PLACEHOLDERS: [&str; 4] = ["intent", "observation", "constraints", "history"];

pub const DEFAULT_TEMPLATE: &str = include_str!("../../assets/prompt_template_v1.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("invalid prompt context: {0}")]
    Context(String),
    #[error("no JSON object found in model output")]
    Parse,
    #[error("strategy does not match the schema: {0}")]
    Schema(String),
    #[error("change {} {}={} rejected: {reason}", .change.object_path, .change.parameter, .change.value)]
    Constraint { change: ConfigChange, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Continue,
    TargetMet,
    Plateau,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Continue, Verdict::TargetMet, Verdict::Plateau];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Continue => "CONTINUE",
            Verdict::TargetMet => "TARGET_MET",
            Verdict::Plateau => "PLATEAU",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConfigChange {
    pub object_path: String,
    pub parameter: String,
    pub value: f64,
}

#[derive(Deserialize)]
struct RawDecision {
    changes: Vec<ConfigChange>,
    justification: String,
    verdict: Verdict,
}

/// Output of the Strategist. CONTINUE always carries at least one change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDecision")]
pub struct StrategyDecision {
    changes: Vec<ConfigChange>,
    justification: String,
    verdict: Verdict,
}

impl TryFrom<RawDecision> for StrategyDecision {
    type Error = PromptError;

    fn try_from(raw: RawDecision) -> Result<Self, Self::Error> {
        Self::new(raw.changes, raw.justification, raw.verdict)
    }
}

impl StrategyDecision {
    pub fn new(changes: Vec<ConfigChange>, justification: impl Into<String>, verdict: Verdict) -> Result<Self, PromptError> {
        if verdict == Verdict::Continue && changes.is_empty() {
            return Err(PromptError::Schema("verdict CONTINUE requires at least one change".into()));
        }
        Ok(Self {
            changes,
            justification: justification.into(),
            verdict,
        })
    }

    pub fn changes(&self) -> &[ConfigChange] {
        &self.changes
    }

    pub fn justification(&self) -> &str {
        &self.justification
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict
    }
}

/// Bounds of one adjustable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustableParameter {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
    pub unit: String,
}

impl AdjustableParameter {
    pub fn validate(&self) -> Result<(), String> {
        let finite = self.min.is_finite() && self.max.is_finite() && self.step.is_finite();
        if !finite || self.min > self.max || self.step <= 0.0 {
            return Err(format!(
                "{}: need min <= max and step > 0, got [{}, {}] step {}",
                self.name, self.min, self.max, self.step
            ));
        }
        if !self.on_grid(self.max) {
            return Err(format!("{}: range {}..{} is not a multiple of step {}", self.name, self.min, self.max, self.step));
        }
        Ok(())
    }

    fn on_grid(&self, v: f64) -> bool {
        let k = (v - self.min) / self.step;
        (k - k.round()).abs() <= 1e-9
    }

    pub fn admits(&self, v: f64) -> Result<(), String> {
        if !v.is_finite() || v < self.min || v > self.max {
            return Err(format!("outside [{}, {}]", self.min, self.max));
        }
        if !self.on_grid(v) {
            return Err(format!("not on the {} {} grid from {}", self.step, self.unit, self.min));
        }
        Ok(())
    }
}

pub type ConstraintSet = Vec<AdjustableParameter>;

/// Constraint sets keyed by object path (`SubNetwork_1/Cell_7`).
pub type Constraints = BTreeMap<String, ConstraintSet>;

/// A validated template with the five headers and four placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("shipped template is valid")
    }
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let headers: Vec<&str> = text.lines().filter(|l| l.starts_with("## ")).collect();
        if headers != HEADERS {
            return Err(PromptError::Template(format!("expected headers {HEADERS:?}, found {headers:?}")));
        }
        for p in PLACEHOLDERS {
            let n = text.matches(&format!("{{{{{p}}}}}")).count();
            if n != 1 {
                return Err(PromptError::Template(format!("placeholder {{{{{p}}}}} appears {n} times")));
            }
        }
        Ok(Self { text: text.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Everything the Strategist shows the model.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub template: &'a PromptTemplate,
    pub intent: &'a Intent,
    pub observation: &'a ObservationSnapshot,
    pub constraints: &'a Constraints,
    pub history: Option<&'a HistoryAdvice>,
    /// Why the previous answer was rejected, for the single repair prompt.
    pub repair_note: Option<&'a str>,
}

pub fn build_prompt(ctx: &PromptContext<'_>) -> Result<String, PromptError> {
    let sub = ctx.intent.scope().object_instance();
    let mut observation = Map::new();
    let mut constraints = Map::new();
    for cell in ctx.intent.scope().object_targets() {
        let obs = ctx
            .observation
            .per_cell
            .get(cell)
            .ok_or_else(|| PromptError::Context(format!("no observation for {cell}")))?;
        observation.insert(
            cell.clone(),
            json!({
                "cellId": obs.report.cell_id,
                "txPowerDbm": obs.config.tx_power_dbm,
                "PEE.EnergyEfficiency": obs.report.energy_efficiency_bits_per_joule,
                "previousEnergyEfficiency": obs.previous_ee,
                "throughputBits": obs.report.throughput_bits,
                "energyJoules": obs.report.energy_joules,
            }),
        );
        let path = crate::o1::wire::object_path(sub, cell);
        let set = ctx
            .constraints
            .get(&path)
            .ok_or_else(|| PromptError::Context(format!("no constraint set for {path}")))?;
        constraints.insert(path, serde_json::to_value(set).expect("constraints serialize"));
    }
    let history = match ctx.history {
        Some(h) => format!("History analysis:\n{}", h.summary_text),
        None => "History analysis: not available".to_string(),
    };
    let pretty = |m: Map<String, Value>| serde_json::to_string_pretty(&Value::Object(m)).expect("json serializes");
    let values = [
        ("intent", ctx.intent.render_body()),
        ("observation", pretty(observation)),
        ("constraints", pretty(constraints)),
        ("history", history),
    ];
    let mut out = substitute(ctx.template.text(), &values);
    if let Some(note) = ctx.repair_note {
        let note = note.split_whitespace().collect::<Vec<_>>().join(" ");
        let at = out.find(&format!("\n{INTENT}\n")).expect("template has an Intent header");
        out.insert_str(
            at,
            &format!("\nYour previous answer was rejected ({note}). Reply again with one JSON object that follows the output format exactly.\n"),
        );
    }
    Ok(out)
}

/// Replaces `{{name}}` tokens in one pass so substituted text is never
/// rescanned.
fn substitute(template: &str, values: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}").map(|end| (&after[..end], end)) {
            Some((name, end)) if values.iter().any(|(k, _)| *k == name) => {
                let (_, v) = values.iter().find(|(k, _)| *k == name).unwrap();
                out.push_str(v);
                rest = &after[end + 2..];
            }
            _ => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Splits a prompt into `(header, body)` pairs at lines that exactly match
/// one of the known headers.
pub fn split_sections(prompt: &str) -> Vec<(&'static str, &str)> {
    let mut marks = Vec::new();
    let mut offset = 0;
    for line in prompt.split_inclusive('\n') {
        let bare = line.trim_end_matches(['\n', '\r']);
        if let Some(h) = HEADERS.iter().find(|h| **h == bare) {
            marks.push((*h, offset, offset + line.len()));
        }
        offset += line.len();
    }
    marks
        .iter()
        .enumerate()
        .map(|(i, (h, _, body_start))| {
            let end = marks.get(i + 1).map_or(prompt.len(), |m| m.1);
            (*h, &prompt[*body_start..end])
        })
        .collect()
}

/// The first complete JSON object in `raw`, skipping any prose or code
/// fences around it.
pub fn extract_json_object(raw: &str) -> Option<Map<String, Value>> {
    raw.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(m))) => Some(m),
            _ => None,
        }
    })
}

pub fn parse_strategy(raw: &str, constraints: &Constraints) -> Result<StrategyDecision, PromptError> {
    let obj = extract_json_object(raw).ok_or(PromptError::Parse)?;
    let decision: StrategyDecision =
        serde_json::from_value(Value::Object(obj)).map_err(|e| PromptError::Schema(e.to_string()))?;
    check_constraints(&decision, constraints)?;
    Ok(decision)
}

/// Checks every change against its cell's constraint set.
pub fn check_constraints(decision: &StrategyDecision, constraints: &Constraints) -> Result<(), PromptError> {
    for change in decision.changes() {
        let reject = |reason: String| PromptError::Constraint {
            change: change.clone(),
            reason,
        };
        if split_object_path(&change.object_path).1.is_none() {
            return Err(reject("objectPath must name a cell".into()));
        }
        let set = constraints
            .get(&change.object_path)
            .ok_or_else(|| reject("no constraint set for this object".into()))?;
        let param = set
            .iter()
            .find(|p| p.name == change.parameter)
            .ok_or_else(|| reject("parameter is not adjustable".into()))?;
        param.admits(change.value).map_err(reject)?;
    }
    Ok(())
}

/// Canonical compact JSON with sorted keys.
pub fn render_decision(d: &StrategyDecision) -> String {
    canonical(serde_json::to_value(d).expect("decision serializes")).to_string()
}

fn canonical(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<String, Value> = m.into_iter().map(|(k, v)| (k, canonical(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        other => other,
    }
}
