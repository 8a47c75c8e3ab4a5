//! Historical Strategy Attempts (append-only JSON lines) and per-cell
//! Strategy Templates.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::prompt::{AdjustableParameter, StrategyDecision};

/// Relative EE change below which an attempt counts as NoChange.
pub const OUTCOME_REL_THRESHOLD: f64 = 1e-6;

pub const DEFAULT_TOP_K: usize = 3;

pub const DEFAULT_TEMPLATES: &str = include_str!("../assets/strategy_templates.json");

#[derive(Debug, thiserror::Error)]
pub enum HistoryError {
    #[error("history i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid record: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KpiPoint {
    pub tx_power_dbm: f64,
    pub ee_bits_per_joule: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Improved,
    Worsened,
    NoChange,
    Error,
}

impl Outcome {
    pub fn classify(before_ee: f64, after_ee: f64) -> Self {
        if after_ee > before_ee * (1.0 + OUTCOME_REL_THRESHOLD) {
            Outcome::Improved
        } else if after_ee < before_ee * (1.0 - OUTCOME_REL_THRESHOLD) {
            Outcome::Worsened
        } else {
            Outcome::NoChange
        }
    }
}

/// Which attempts are relevant to each other: same KPI on the same cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttemptKey {
    pub target_name: String,
    pub cell_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawAttempt {
    attempt_id: String,
    intent_id: String,
    target_name: String,
    cell_id: String,
    iteration_index: u32,
    timestamp_tick: u64,
    observed_before: KpiPoint,
    decision: StrategyDecision,
    observed_after: Option<KpiPoint>,
    outcome: Outcome,
}

/// One configuration cycle and what it did to the KPI. `timestampTick` is
/// simulation time, so reruns produce identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAttempt", into = "RawAttempt")]
pub struct StrategyAttempt {
    raw: RawAttempt,
}

impl TryFrom<RawAttempt> for StrategyAttempt {
    type Error = HistoryError;

    fn try_from(raw: RawAttempt) -> Result<Self, HistoryError> {
        let expected = match raw.observed_after {
            None => Outcome::Error,
            Some(after) => Outcome::classify(raw.observed_before.ee_bits_per_joule, after.ee_bits_per_joule),
        };
        if raw.outcome != expected {
            return Err(HistoryError::Schema(format!(
                "attempt {} labelled {:?} but observations imply {:?}",
                raw.attempt_id, raw.outcome, expected
            )));
        }
        Ok(Self { raw })
    }
}

impl From<StrategyAttempt> for RawAttempt {
    fn from(a: StrategyAttempt) -> Self {
        a.raw
    }
}

pub struct AttemptFields {
    pub attempt_id: String,
    pub intent_id: String,
    pub key: AttemptKey,
    pub iteration_index: u32,
    pub timestamp_tick: u64,
    pub observed_before: KpiPoint,
    pub decision: StrategyDecision,
    pub observed_after: Option<KpiPoint>,
}

impl StrategyAttempt {
    /// Builds an attempt with the outcome derived from the observations.
    pub fn new(f: AttemptFields) -> Self {
        let outcome = match f.observed_after {
            None => Outcome::Error,
            Some(after) => Outcome::classify(f.observed_before.ee_bits_per_joule, after.ee_bits_per_joule),
        };
        Self::with_outcome(f, outcome).expect("derived outcome is consistent")
    }

    /// Builds an attempt with an explicit label, rejecting labels that
    /// contradict the observations.
    pub fn with_outcome(f: AttemptFields, outcome: Outcome) -> Result<Self, HistoryError> {
        RawAttempt {
            attempt_id: f.attempt_id,
            intent_id: f.intent_id,
            target_name: f.key.target_name,
            cell_id: f.key.cell_id,
            iteration_index: f.iteration_index,
            timestamp_tick: f.timestamp_tick,
            observed_before: f.observed_before,
            decision: f.decision,
            observed_after: f.observed_after,
            outcome,
        }
        .try_into()
    }

    pub fn attempt_id(&self) -> &str {
        &self.raw.attempt_id
    }

    pub fn intent_id(&self) -> &str {
        &self.raw.intent_id
    }

    pub fn key(&self) -> AttemptKey {
        AttemptKey {
            target_name: self.raw.target_name.clone(),
            cell_id: self.raw.cell_id.clone(),
        }
    }

    fn matches(&self, key: &AttemptKey) -> bool {
        self.raw.target_name == key.target_name && self.raw.cell_id == key.cell_id
    }

    pub fn iteration_index(&self) -> u32 {
        self.raw.iteration_index
    }

    pub fn timestamp_tick(&self) -> u64 {
        self.raw.timestamp_tick
    }

    pub fn observed_before(&self) -> KpiPoint {
        self.raw.observed_before
    }

    pub fn decision(&self) -> &StrategyDecision {
        &self.raw.decision
    }

    pub fn observed_after(&self) -> Option<KpiPoint> {
        self.raw.observed_after
    }

    pub fn outcome(&self) -> Outcome {
        self.raw.outcome
    }
}

/// Append-only attempt log, optionally backed by a JSON-lines file.
#[derive(Debug, Default)]
pub struct HistoryStore {
    path: Option<PathBuf>,
    file: Option<File>,
    attempts: Vec<StrategyAttempt>,
}

impl HistoryStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens or creates the log at `path`, loading existing attempts.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, HistoryError> {
        let path = path.as_ref().to_path_buf();
        let mut attempts = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let a = serde_json::from_str(&line)
                    .map_err(|e| HistoryError::Schema(format!("{} line {}: {e}", path.display(), i + 1)))?;
                attempts.push(a);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            file: Some(file),
            attempts,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends and, for file-backed stores, syncs before returning.
    pub fn append(&mut self, attempt: StrategyAttempt) -> Result<(), HistoryError> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(&attempt).expect("attempt serializes");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.attempts.push(attempt);
        Ok(())
    }

    /// Every attempt in append order.
    pub fn attempts(&self) -> &[StrategyAttempt] {
        &self.attempts
    }

    pub fn len(&self) -> usize {
        self.attempts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attempts.is_empty()
    }

    pub fn next_attempt_id(&self) -> String {
        format!("attempt-{:06}", self.attempts.len() + 1)
    }

    /// Attempts for `key` ordered by iteration index, then append order.
    pub fn attempts_for(&self, key: &AttemptKey) -> Vec<StrategyAttempt> {
        let mut v: Vec<_> = self.attempts.iter().filter(|a| a.matches(key)).cloned().collect();
        v.sort_by_key(|a| a.iteration_index());
        v
    }

    /// Up to `k` attempts for `key`, best first: Improved outcomes, then
    /// higher EE after the change, then more recent, then attempt id.
    pub fn query_top_k(&self, key: &AttemptKey, k: usize) -> Vec<StrategyAttempt> {
        let mut ranked: Vec<(usize, &StrategyAttempt)> =
            self.attempts.iter().enumerate().filter(|(_, a)| a.matches(key)).collect();
        ranked.sort_by(|(ia, a), (ib, b)| rank(a, *ia, b, *ib));
        ranked.into_iter().take(k).map(|(_, a)| a.clone()).collect()
    }
}

fn rank(a: &StrategyAttempt, ia: usize, b: &StrategyAttempt, ib: usize) -> Ordering {
    let improved = |x: &StrategyAttempt| x.outcome() == Outcome::Improved;
    let ee = |x: &StrategyAttempt| x.observed_after().map_or(f64::NEG_INFINITY, |p| p.ee_bits_per_joule);
    improved(b)
        .cmp(&improved(a))
        .then_with(|| ee(b).total_cmp(&ee(a)))
        .then_with(|| ib.cmp(&ia))
        .then_with(|| a.attempt_id().cmp(b.attempt_id()))
}

/// Capability data for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StrategyTemplate {
    pub cell_id: String,
    pub adjustable_parameters: Vec<AdjustableParameter>,
    #[serde(default)]
    pub notes: String,
}

pub fn parse_templates(text: &str) -> Result<BTreeMap<String, StrategyTemplate>, HistoryError> {
    let list: Vec<StrategyTemplate> = serde_json::from_str(text).map_err(|e| HistoryError::Schema(e.to_string()))?;
    let mut out = BTreeMap::new();
    for t in list {
        for p in &t.adjustable_parameters {
            p.validate().map_err(|e| HistoryError::Schema(format!("{}: {e}", t.cell_id)))?;
        }
        if out.contains_key(&t.cell_id) {
            return Err(HistoryError::Schema(format!("duplicate template for {}", t.cell_id)));
        }
        out.insert(t.cell_id.clone(), t);
    }
    Ok(out)
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<BTreeMap<String, StrategyTemplate>, HistoryError> {
    parse_templates(&std::fs::read_to_string(path)?)
}

pub fn default_templates() -> BTreeMap<String, StrategyTemplate> {
    parse_templates(DEFAULT_TEMPLATES).expect("shipped templates are valid")
}
