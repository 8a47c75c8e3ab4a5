//! Runs one intent to termination over the agent pipeline.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use tracing::{info, warn};

use crate::agents::{
    analyze_history, attempt_key, constraints_for, orchestrate, strategize, AgentError, CellObservation,
    ObservationSnapshot,
};
use crate::history::{AttemptFields, HistoryStore, KpiPoint, StrategyAttempt, StrategyTemplate, DEFAULT_TOP_K};
use crate::inference::StrategyBackend;
use crate::intent::{evaluate_condition, Intent, RAN_ENERGY_EFFICIENCY};
use crate::o1::wire::object_path;
use crate::o1::{O1Client, O1Error, PmSubscription};
use crate::prompt::{PromptTemplate, StrategyDecision, Verdict};
use crate::sim::PmReport;

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub max_iterations: u32,
    /// Consecutive satisfying PM windows needed before the intent counts
    /// as fulfilled.
    pub assurance_windows: u32,
    pub plateau_epsilon_rel: f64,
    /// Longest wait for one PM window.
    pub iteration_timeout: Duration,
    pub history_k: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            assurance_windows: 3,
            plateau_epsilon_rel: 1e-3,
            iteration_timeout: Duration::from_secs(30),
            history_k: DEFAULT_TOP_K,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations < 1 {
            return Err("maxIterations must be at least 1".into());
        }
        if self.assurance_windows < 1 {
            return Err("assuranceWindows must be at least 1".into());
        }
        if !(self.plateau_epsilon_rel > 0.0 && self.plateau_epsilon_rel < 1.0) {
            return Err(format!("plateauEpsilonRel {} not in (0, 1)", self.plateau_epsilon_rel));
        }
        if self.history_k < 1 {
            return Err("history k must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LoopStatus {
    Fulfilled,
    AlreadySatisfied,
    Abandoned,
    Failed,
}

/// One configuration cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IterationRecord {
    pub index: u32,
    pub tx_power_before: f64,
    pub tx_power_after: f64,
    pub ee_before: f64,
    pub ee_after: f64,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LoopOutcome {
    pub intent_id: String,
    pub status: LoopStatus,
    pub reason: String,
    /// Observation taken before any configuration.
    pub baseline: KpiPoint,
    pub iterations: Vec<IterationRecord>,
    pub edits_issued: u32,
    /// Windows observed without a configuration change.
    pub monitoring_windows: u32,
}

impl LoopOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }

    /// Final observed point: the last iteration's result or the baseline.
    pub fn final_point(&self) -> KpiPoint {
        self.iterations.last().map_or(self.baseline, |r| KpiPoint {
            tx_power_dbm: r.tx_power_after,
            ee_bits_per_joule: r.ee_after,
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct WiringError {
    pub stage: &'static str,
    pub source: O1Error,
}

fn wiring(stage: &'static str) -> impl FnOnce(O1Error) -> WiringError {
    move |source| WiringError { stage, source }
}

/// Everything the loop talks to.
pub struct Wiring<'a> {
    pub client: &'a O1Client,
    pub store: &'a mut HistoryStore,
    pub templates: &'a BTreeMap<String, StrategyTemplate>,
    pub template: &'a PromptTemplate,
    pub backend: &'a dyn StrategyBackend,
}

/// Per-target verdicts for one report. KPIs without a PM counter are
/// never satisfied.
pub fn evaluate_iteration(intent: &Intent, report: &PmReport) -> BTreeMap<String, bool> {
    intent
        .targets()
        .iter()
        .map(|t| {
            let ok = t.name() == RAN_ENERGY_EFFICIENCY && evaluate_condition(t, report.energy_efficiency_bits_per_joule);
            (t.name().to_string(), ok)
        })
        .collect()
}

fn satisfied(intent: &Intent, report: &PmReport) -> bool {
    evaluate_iteration(intent, report).values().all(|&v| v)
}

pub fn trace_csv(outcome: &LoopOutcome) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "txPowerDbm", "eeBitsPerJoule", "verdict"])
        .expect("in-memory write");
    w.serialize((0u32, outcome.baseline.tx_power_dbm, outcome.baseline.ee_bits_per_joule, "BASELINE"))
        .expect("in-memory write");
    for r in &outcome.iterations {
        w.serialize((r.index, r.tx_power_after, r.ee_after, r.verdict.as_str()))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Writes the iteration trace, baseline first.
pub fn emit_trace(outcome: &LoopOutcome, path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, trace_csv(outcome))
}

struct Observer {
    sub: PmSubscription,
    cell: String,
    canonical: String,
    path: String,
    timeout: Duration,
    last: Option<CellObservation>,
}

impl Observer {
    /// Waits for the first window starting at or after `min_start` and
    /// reads the cell's configuration.
    async fn observe(&mut self, client: &O1Client, min_start: u64) -> Result<CellObservation, WiringError> {
        let report = self
            .sub
            .next_for(&self.canonical, min_start, self.timeout)
            .await
            .map_err(wiring("waiting for PM report"))?;
        let config = client.get_config(&self.path).await.map_err(wiring("reading configuration"))?;
        let obs = CellObservation {
            previous_ee: self.last.as_ref().map(|o| o.report.energy_efficiency_bits_per_joule),
            report,
            config,
        };
        self.last = Some(obs.clone());
        Ok(obs)
    }

    async fn next_window(&mut self, client: &O1Client) -> Result<CellObservation, WiringError> {
        let after = self.last.as_ref().map_or(0, |o| o.report.window_end_tick);
        self.observe(client, after).await
    }

    fn snapshot(&self, obs: &CellObservation) -> ObservationSnapshot {
        ObservationSnapshot {
            per_cell: BTreeMap::from([(self.cell.clone(), obs.clone())]),
            captured_at_tick: obs.report.window_end_tick,
        }
    }
}

fn point(o: &CellObservation) -> KpiPoint {
    KpiPoint {
        tx_power_dbm: o.config.tx_power_dbm,
        ee_bits_per_joule: o.report.energy_efficiency_bits_per_joule,
    }
}

fn at_bound(o: &CellObservation) -> bool {
    let c = &o.config;
    c.tx_power_dbm <= c.min_dbm || c.tx_power_dbm >= c.max_dbm
}

struct Run {
    intent_id: String,
    baseline: KpiPoint,
    iterations: Vec<IterationRecord>,
    edits: u32,
    monitoring: u32,
}

impl Run {
    fn finish(self, status: LoopStatus, reason: impl Into<String>) -> LoopOutcome {
        let reason = reason.into();
        info!(?status, iterations = self.iterations.len(), "{reason}");
        LoopOutcome {
            intent_id: self.intent_id,
            status,
            reason,
            baseline: self.baseline,
            iterations: self.iterations,
            edits_issued: self.edits,
            monitoring_windows: self.monitoring,
        }
    }
}

/// Observes, then iterates analyze -> strategize -> orchestrate -> observe
/// until the intent is fulfilled, found already satisfied, abandoned at a
/// plateau, or out of budget. Plan-level failures are reported in the
/// outcome; only a broken O1 connection is an error.
pub async fn run_intent(intent: &Intent, cfg: &LoopConfig, w: Wiring<'_>) -> Result<LoopOutcome, WiringError> {
    let client = w.client;
    let cell = intent.scope().primary_cell().to_string();
    let path = object_path(intent.scope().object_instance(), &cell);
    let initial = client.get_config(&path).await.map_err(wiring("reading configuration"))?;
    let sub = client
        .pm_subscribe(Some(vec![cell.clone()]))
        .await
        .map_err(wiring("subscribing to PM"))?;
    let mut ob = Observer {
        sub,
        cell,
        canonical: initial.cell_id,
        path,
        timeout: cfg.iteration_timeout,
        last: None,
    };

    let mut obs = ob.observe(client, 0).await?;
    let mut run = Run {
        intent_id: intent.id().to_string(),
        baseline: point(&obs),
        iterations: Vec::new(),
        edits: 0,
        monitoring: 0,
    };
    let needed = cfg.assurance_windows;
    let mut streak = 0;

    if satisfied(intent, &obs.report) {
        streak = 1;
        while streak < needed {
            obs = ob.next_window(client).await?;
            run.monitoring += 1;
            if !satisfied(intent, &obs.report) {
                streak = 0;
                break;
            }
            streak += 1;
        }
        if streak >= needed {
            let msg = format!(
                "baseline EE {:.0} bit/J already satisfies the intent over {needed} windows; no configuration issued",
                obs.report.energy_efficiency_bits_per_joule
            );
            return Ok(run.finish(LoopStatus::AlreadySatisfied, msg));
        }
    }

    let key_snapshot = ob.snapshot(&obs);
    let key = attempt_key(intent, &key_snapshot);
    let mut flat_at_bound = 0;
    loop {
        if streak >= needed {
            let msg = format!(
                "EE {:.0} bit/J at txPower {} dBm held for {needed} consecutive windows",
                obs.report.energy_efficiency_bits_per_joule, obs.config.tx_power_dbm
            );
            return Ok(run.finish(LoopStatus::Fulfilled, msg));
        }
        if run.iterations.len() as u32 >= cfg.max_iterations {
            let msg = format!("intent not fulfilled within {} iterations", cfg.max_iterations);
            return Ok(run.finish(LoopStatus::Failed, msg));
        }

        let snapshot = ob.snapshot(&obs);
        let advice = analyze_history(w.store, intent, &snapshot, cfg.history_k);
        let decision = match constraints_for(intent, &snapshot, w.templates) {
            Ok(constraints) => {
                strategize(intent, Some(&advice), &snapshot, &constraints, w.template, w.backend).await
            }
            Err(e) => Err(e),
        };
        let decision: StrategyDecision = match decision {
            Ok(d) => d,
            Err(e @ AgentError::Inference(_)) => return Ok(run.finish(LoopStatus::Failed, format!("inference failed: {e}"))),
            Err(e) => return Ok(run.finish(LoopStatus::Failed, e.to_string())),
        };

        if decision.verdict() == Verdict::Plateau {
            let msg = format!(
                "strategist reported a plateau at txPower {} dBm (EE {:.0} bit/J): {}",
                obs.config.tx_power_dbm,
                obs.report.energy_efficiency_bits_per_joule,
                decision.justification()
            );
            return Ok(run.finish(LoopStatus::Abandoned, msg));
        }

        if decision.changes().is_empty() && satisfied(intent, &obs.report) {
            obs = ob.next_window(client).await?;
            run.monitoring += 1;
            streak = if satisfied(intent, &obs.report) { streak + 1 } else { 0 };
            continue;
        }

        let index = run.iterations.len() as u32 + 1;
        let before = obs.clone();
        let (applied, error) = match orchestrate(&decision, client).await {
            Ok(applied) => (applied, None),
            Err(e) if matches!(e.source, O1Error::Disconnected | O1Error::Io(_)) => {
                return Err(WiringError {
                    stage: "applying configuration",
                    source: e.source,
                })
            }
            Err(e) => {
                warn!("{e}");
                let msg = e.to_string();
                (e.applied, Some(msg))
            }
        };
        run.edits += applied.len() as u32;
        let settle = applied
            .iter()
            .map(|a| a.effective_tick)
            .max()
            .unwrap_or(before.report.window_end_tick)
            .max(before.report.window_end_tick);
        obs = ob.observe(client, settle).await?;

        let attempt = StrategyAttempt::new(AttemptFields {
            attempt_id: w.store.next_attempt_id(),
            intent_id: intent.id().to_string(),
            key: key.clone(),
            iteration_index: index,
            timestamp_tick: obs.report.window_end_tick,
            observed_before: point(&before),
            decision: decision.clone(),
            observed_after: error.is_none().then(|| point(&obs)),
        });
        if let Err(e) = w.store.append(attempt) {
            return Ok(run.finish(LoopStatus::Failed, format!("recording attempt: {e}")));
        }
        let ee_before = before.report.energy_efficiency_bits_per_joule;
        let ee_after = obs.report.energy_efficiency_bits_per_joule;
        run.iterations.push(IterationRecord {
            index,
            tx_power_before: before.config.tx_power_dbm,
            tx_power_after: obs.config.tx_power_dbm,
            ee_before,
            ee_after,
            verdict: decision.verdict(),
            error,
        });
        info!(
            iteration = index,
            tx = obs.config.tx_power_dbm,
            ee = ee_after,
            verdict = %decision.verdict(),
            "iteration complete"
        );

        streak = if satisfied(intent, &obs.report) { streak + 1 } else { 0 };
        let rel = ((ee_after - ee_before) / ee_before).abs();
        flat_at_bound = if at_bound(&obs) && rel < cfg.plateau_epsilon_rel {
            flat_at_bound + 1
        } else {
            0
        };
        if flat_at_bound >= 2 && streak < needed {
            let msg = format!(
                "plateau: txPower pinned at its {} dBm bound with EE flat at {:.0} bit/J for 2 iterations",
                obs.config.tx_power_dbm, ee_after
            );
            return Ok(run.finish(LoopStatus::Abandoned, msg));
        }
    }
}
