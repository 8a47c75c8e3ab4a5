//! History Analyzer, Strategist and Orchestrator.

use std::collections::BTreeMap;

use tracing::{debug, warn};

use crate::history::{AttemptKey, HistoryStore, StrategyAttempt, StrategyTemplate};
use crate::inference::{InferenceError, StrategyBackend};
use crate::intent::Intent;
use crate::o1::wire::object_path;
use crate::o1::{O1Client, O1Error};
use crate::prompt::{
    build_prompt, check_constraints, parse_strategy, AdjustableParameter, ConfigChange, Constraints, PromptContext,
    PromptError, PromptTemplate, StrategyDecision,
};
use crate::sim::{AppliedChange, CellConfig, PmReport, TX_POWER};

/// Latest completed window and configuration of one target cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellObservation {
    pub report: PmReport,
    pub config: CellConfig,
    /// EE of the window observed before this one, if any.
    pub previous_ee: Option<f64>,
}

/// Keyed by the cell name used in the intent.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSnapshot {
    pub per_cell: BTreeMap<String, CellObservation>,
    pub captured_at_tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryAdvice {
    pub recommended: Option<StrategyAttempt>,
    pub alternatives: Vec<StrategyAttempt>,
    pub summary_text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("strategy rejected after repair: {reason}")]
    Strategy { reason: PromptError, raw: String },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Context(PromptError),
}

#[derive(Debug, thiserror::Error)]
#[error("applying {} {}={} failed after {} change(s): {source}", .failed.object_path, .failed.parameter, .failed.value, .applied.len())]
pub struct OrchestrationError {
    pub failed: ConfigChange,
    pub applied: Vec<AppliedChange>,
    pub source: O1Error,
}

/// History key for an intent: its first KPI on the primary cell's
/// canonical id.
pub fn attempt_key(intent: &Intent, snapshot: &ObservationSnapshot) -> AttemptKey {
    let cell = intent.scope().primary_cell();
    AttemptKey {
        target_name: intent.targets()[0].name().to_string(),
        cell_id: snapshot
            .per_cell
            .get(cell)
            .map_or_else(|| cell.to_string(), |o| o.report.cell_id.clone()),
    }
}

pub fn analyze_history(store: &HistoryStore, intent: &Intent, snapshot: &ObservationSnapshot, k: usize) -> HistoryAdvice {
    let ranked = store.query_top_k(&attempt_key(intent, snapshot), k.max(1));
    let summary_text = if ranked.is_empty() {
        "no prior attempts".to_string()
    } else {
        ranked
            .iter()
            .enumerate()
            .map(|(i, a)| format!("{}. {}", i + 1, summarize(a)))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut it = ranked.into_iter();
    HistoryAdvice {
        recommended: it.next(),
        alternatives: it.collect(),
        summary_text,
    }
}

fn summarize(a: &StrategyAttempt) -> String {
    let before = a.observed_before();
    let tx_after = a.observed_after().map(|p| p.tx_power_dbm).or_else(|| {
        a.decision()
            .changes()
            .iter()
            .find(|c| c.parameter == TX_POWER)
            .map(|c| c.value)
    });
    let fmt_tx = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v}"));
    let ee_after = a
        .observed_after()
        .map_or("n/a".to_string(), |p| format!("{:.0}", p.ee_bits_per_joule));
    format!(
        "txPower {} -> {} dBm, EE {:.0} -> {} bit/J, {:?}",
        before.tx_power_dbm,
        fmt_tx(tx_after),
        before.ee_bits_per_joule,
        ee_after,
        a.outcome()
    )
}

/// Constraint sets for the intent's cells, from the Strategy Templates
/// when present and from the live configuration otherwise.
pub fn constraints_for(
    intent: &Intent,
    snapshot: &ObservationSnapshot,
    templates: &BTreeMap<String, StrategyTemplate>,
) -> Result<Constraints, AgentError> {
    let sub = intent.scope().object_instance();
    let mut out = Constraints::new();
    for cell in intent.scope().object_targets() {
        let obs = snapshot
            .per_cell
            .get(cell)
            .ok_or_else(|| AgentError::Context(PromptError::Context(format!("no observation for {cell}"))))?;
        let set = match templates.get(&obs.report.cell_id).or_else(|| templates.get(cell)) {
            Some(t) => t.adjustable_parameters.clone(),
            None => {
                let c = obs.config.constraints();
                vec![AdjustableParameter {
                    name: TX_POWER.into(),
                    min: c.min_dbm,
                    max: c.max_dbm,
                    step: c.step_dbm,
                    unit: "dBm".into(),
                }]
            }
        };
        out.insert(object_path(sub, cell), set);
    }
    Ok(out)
}

/// Prompt, infer and parse, with one repair round on malformed output.
pub async fn strategize(
    intent: &Intent,
    advice: Option<&HistoryAdvice>,
    snapshot: &ObservationSnapshot,
    constraints: &Constraints,
    template: &PromptTemplate,
    backend: &dyn StrategyBackend,
) -> Result<StrategyDecision, AgentError> {
    let mut ctx = PromptContext {
        template,
        intent,
        observation: snapshot,
        constraints,
        history: advice,
        repair_note: None,
    };
    let prompt = build_prompt(&ctx).map_err(AgentError::Context)?;
    let raw = backend.infer(&prompt).await?;
    let first = match parse_strategy(&raw, constraints) {
        Ok(d) => {
            check_constraints(&d, constraints).map_err(AgentError::Context)?;
            return Ok(d);
        }
        Err(e) => e,
    };
    warn!("strategy rejected ({first}); asking once more");
    let note = first.to_string();
    ctx.repair_note = Some(&note);
    let prompt = build_prompt(&ctx).map_err(AgentError::Context)?;
    let raw = backend.infer(&prompt).await?;
    let decision = parse_strategy(&raw, constraints).map_err(|reason| AgentError::Strategy { reason, raw })?;
    check_constraints(&decision, constraints).map_err(AgentError::Context)?;
    Ok(decision)
}

/// Applies the decision's changes in order over CM edit-config.
pub async fn orchestrate(decision: &StrategyDecision, client: &O1Client) -> Result<Vec<AppliedChange>, OrchestrationError> {
    let mut applied = Vec::with_capacity(decision.changes().len());
    for change in decision.changes() {
        match client.edit_config(&change.object_path, &change.parameter, change.value).await {
            Ok(a) => {
                debug!(cell = %a.cell_id, old = a.old_value, new = a.new_value, "applied");
                applied.push(a);
            }
            Err(source) => {
                return Err(OrchestrationError {
                    failed: change.clone(),
                    applied,
                    source,
                })
            }
        }
    }
    Ok(applied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{AttemptFields, KpiPoint};
    use crate::intent::parse_intent;
    use crate::prompt::Verdict;

    const EXAMPLE_INTENT: &str = include_str!("../assets/intents/cell7_energy_efficiency.json");

    fn snapshot() -> ObservationSnapshot {
        ObservationSnapshot {
            per_cell: BTreeMap::from([(
                "Cell_7".to_string(),
                CellObservation {
                    report: PmReport {
                        cell_id: "Cell_1".into(),
                        window_start_tick: 0,
                        window_end_tick: 5,
                        energy_efficiency_bits_per_joule: 765_493.0,
                        throughput_bits: 1.0,
                        energy_joules: 1.0,
                        tx_power_dbm_at_window_end: 30.0,
                    },
                    config: CellConfig {
                        cell_id: "Cell_1".into(),
                        tx_power_dbm: 30.0,
                        min_dbm: 10.0,
                        max_dbm: 40.0,
                        step_dbm: 1.0,
                    },
                    previous_ee: None,
                },
            )]),
            captured_at_tick: 5,
        }
    }

    fn attempt(id: &str, cell: &str, before: f64, after: f64) -> StrategyAttempt {
        StrategyAttempt::new(AttemptFields {
            attempt_id: id.into(),
            intent_id: "i".into(),
            key: AttemptKey {
                target_name: "RANEnergyEfficiency".into(),
                cell_id: cell.into(),
            },
            iteration_index: 1,
            timestamp_tick: 0,
            observed_before: KpiPoint {
                tx_power_dbm: 30.0,
                ee_bits_per_joule: before,
            },
            decision: StrategyDecision::new(
                vec![ConfigChange {
                    object_path: "SubNetwork_1/Cell_7".into(),
                    parameter: "txPower".into(),
                    value: 20.0,
                }],
                "",
                Verdict::Continue,
            )
            .unwrap(),
            observed_after: Some(KpiPoint {
                tx_power_dbm: 20.0,
                ee_bits_per_joule: after,
            }),
        })
    }

    #[test]
    fn empty_history() {
        let intent = parse_intent(EXAMPLE_INTENT).unwrap();
        let advice = analyze_history(&HistoryStore::in_memory(), &intent, &snapshot(), 3);
        assert!(advice.recommended.is_none());
        assert_eq!(advice.summary_text, "no prior attempts");
    }

    #[test]
    fn improved_ranks_first_and_other_cells_are_ignored() {
        let intent = parse_intent(EXAMPLE_INTENT).unwrap();
        let mut store = HistoryStore::in_memory();
        let worse = attempt("a", "Cell_1", 799_756.0, 780_000.0);
        let better = attempt("b", "Cell_1", 765_493.0, 799_756.0);
        store.append(worse.clone()).unwrap();
        store.append(better.clone()).unwrap();
        store.append(attempt("c", "Cell_2", 700_000.0, 900_000.0)).unwrap();
        let advice = analyze_history(&store, &intent, &snapshot(), 3);
        assert_eq!(advice.recommended, Some(better));
        assert_eq!(advice.alternatives, vec![worse]);
        assert_eq!(
            advice.summary_text,
            "1. txPower 30 -> 20 dBm, EE 765493 -> 799756 bit/J, Improved\n2. txPower 30 -> 20 dBm, EE 799756 -> 780000 bit/J, Worsened"
        );
    }

    #[test]
    fn template_lookup_uses_the_canonical_cell() {
        let intent = parse_intent(EXAMPLE_INTENT).unwrap();
        let mut templates = crate::history::default_templates();
        templates.get_mut("Cell_1").unwrap().adjustable_parameters[0].min = 12.0;
        let c = constraints_for(&intent, &snapshot(), &templates).unwrap();
        assert_eq!(c["SubNetwork_1/Cell_7"][0].min, 12.0);
        let c = constraints_for(&intent, &snapshot(), &BTreeMap::new()).unwrap();
        assert_eq!(c["SubNetwork_1/Cell_7"][0].min, 10.0);
    }
}
