use async_trait::async_trait;
use serde_json::{Map, Value};

use super::{InferenceError, StrategyBackend};
use crate::intent::{parse_intent, TargetCondition, RAN_ENERGY_EFFICIENCY};
use crate::prompt::{
    extract_json_object, render_decision, split_sections, AdjustableParameter, ConfigChange, StrategyDecision, Verdict,
    CONFIGURATION_CONSTRAINTS, CURRENT_OBSERVATION, INTENT,
};
use crate::sim::TX_POWER;

/// Relative EE change under which two observations count as flat.
pub const FLAT_REL: f64 = 1e-3;

/// Deterministic stand-in for the model: halves the distance between the
/// current transmit power and the floor on every step.
#[derive(Debug, Clone)]
pub struct HeuristicStrategist {
    floor_dbm: f64,
}

/// What the heuristic reads back out of a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct CellView {
    pub object_path: String,
    pub tx_power_dbm: f64,
    pub ee: f64,
    pub previous_ee: Option<f64>,
    pub condition: TargetCondition,
    pub target: f64,
    pub bounds: AdjustableParameter,
}

impl HeuristicStrategist {
    pub fn new(floor_dbm: f64) -> Self {
        Self { floor_dbm }
    }

    pub fn floor_dbm(&self) -> f64 {
        self.floor_dbm
    }

    /// Next power when moving from `cur` toward `bound` by half the
    /// remaining distance, rounded up to whole steps.
    pub fn next_power(cur: f64, bound: f64, step: f64) -> f64 {
        let k = ((cur - bound).abs() / step).round() as i64;
        let delta = ((k + 1) / 2) as f64 * step;
        if bound < cur {
            (cur - delta).max(bound)
        } else {
            (cur + delta).min(bound)
        }
    }

    pub fn decide(&self, v: &CellView) -> StrategyDecision {
        let floor = self.floor_dbm.max(v.bounds.min);
        let met = match v.condition {
            TargetCondition::IsGreaterThan => v.ee > v.target,
            TargetCondition::IsLessThan => v.ee < v.target,
            TargetCondition::IsEqualTo => {
                (v.ee - v.target).abs() <= crate::intent::EQUALITY_REL_TOLERANCE * v.target.abs().max(1.0)
            }
        };
        let raise_ee = match v.condition {
            TargetCondition::IsGreaterThan => true,
            TargetCondition::IsLessThan => false,
            TargetCondition::IsEqualTo => v.ee < v.target,
        };
        let bound = if raise_ee { floor } else { v.bounds.max };
        let next = Self::next_power(v.tx_power_dbm, bound, v.bounds.step);
        let change = |value: f64| ConfigChange {
            object_path: v.object_path.clone(),
            parameter: TX_POWER.to_string(),
            value,
        };
        let cur = v.tx_power_dbm;
        if met {
            let refine = v.condition == TargetCondition::IsGreaterThan && next != cur;
            let (changes, why) = if refine {
                (
                    vec![change(next)],
                    format!("EE {:.0} bit/J meets the target {:.0}; refining txPower {cur} -> {next} dBm", v.ee, v.target),
                )
            } else {
                (vec![], format!("EE {:.0} bit/J meets the target {:.0}; holding txPower at {cur} dBm", v.ee, v.target))
            };
            return StrategyDecision::new(changes, why, Verdict::TargetMet).expect("TARGET_MET may be empty");
        }
        let flat = v
            .previous_ee
            .is_some_and(|p| ((v.ee - p) / p).abs() < FLAT_REL);
        if cur == bound && flat {
            let why = format!(
                "txPower is at its {bound} dBm bound and EE {:.0} bit/J no longer moves; target {:.0} is out of reach",
                v.ee, v.target
            );
            return StrategyDecision::new(vec![], why, Verdict::Plateau).expect("PLATEAU may be empty");
        }
        let why = format!(
            "EE {:.0} bit/J misses the target {:.0}; moving txPower {cur} -> {next} dBm",
            v.ee, v.target
        );
        StrategyDecision::new(vec![change(next)], why, Verdict::Continue).expect("CONTINUE carries a change")
    }
}

/// Reads the primary cell's state out of a prompt built from the shipped
/// template.
pub fn read_prompt(prompt: &str) -> Result<CellView, InferenceError> {
    let err = |m: String| InferenceError::Prompt(m);
    let sections = split_sections(prompt);
    let body = |h: &str| {
        sections
            .iter()
            .find(|(name, _)| *name == h)
            .map(|(_, b)| *b)
            .ok_or_else(|| err(format!("missing section {h}")))
    };
    let intent = parse_intent(body(INTENT)?.trim()).map_err(|e| err(e.to_string()))?;
    let target = intent
        .targets()
        .iter()
        .find(|t| t.name() == RAN_ENERGY_EFFICIENCY)
        .ok_or_else(|| err("intent has no energy-efficiency target".into()))?;
    let cell = intent.scope().primary_cell();
    let object_path = crate::o1::wire::object_path(intent.scope().object_instance(), cell);

    let observation = extract_json_object(body(CURRENT_OBSERVATION)?).ok_or_else(|| err("no observation JSON".into()))?;
    let obs = observation
        .get(cell)
        .and_then(Value::as_object)
        .ok_or_else(|| err(format!("no observation for {cell}")))?;
    let num = |m: &Map<String, Value>, k: &str| m.get(k).and_then(Value::as_f64).ok_or_else(|| err(format!("missing {k}")));

    let constraints =
        extract_json_object(body(CONFIGURATION_CONSTRAINTS)?).ok_or_else(|| err("no constraints JSON".into()))?;
    let bounds: Vec<AdjustableParameter> = constraints
        .get(&object_path)
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| err(e.to_string()))?
        .ok_or_else(|| err(format!("no constraints for {object_path}")))?;
    let bounds = bounds
        .into_iter()
        .find(|p| p.name == TX_POWER)
        .ok_or_else(|| err("txPower is not adjustable".into()))?;

    Ok(CellView {
        tx_power_dbm: num(obs, "txPowerDbm")?,
        ee: num(obs, "PEE.EnergyEfficiency")?,
        previous_ee: obs.get("previousEnergyEfficiency").and_then(Value::as_f64),
        object_path,
        condition: target.condition(),
        target: target.value(),
        bounds,
    })
}

#[async_trait]
impl StrategyBackend for HeuristicStrategist {
    async fn infer(&self, prompt: &str) -> Result<String, InferenceError> {
        Ok(render_decision(&self.decide(&read_prompt(prompt)?)))
    }

    fn describe(&self) -> String {
        format!("heuristic(floor {} dBm)", self.floor_dbm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(tx: f64, ee: f64, prev: Option<f64>, target: f64) -> CellView {
        CellView {
            object_path: "SubNetwork_1/Cell_7".into(),
            tx_power_dbm: tx,
            ee,
            previous_ee: prev,
            condition: TargetCondition::IsGreaterThan,
            target,
            bounds: AdjustableParameter {
                name: "txPower".into(),
                min: 10.0,
                max: 40.0,
                step: 1.0,
                unit: "dBm".into(),
            },
        }
    }

    #[test]
    fn halving_sequence_from_30() {
        let mut seq = vec![30.0];
        while *seq.last().unwrap() > 10.0 {
            seq.push(HeuristicStrategist::next_power(*seq.last().unwrap(), 10.0, 1.0));
        }
        assert_eq!(seq, [30.0, 20.0, 15.0, 12.0, 11.0, 10.0]);
    }

    #[test]
    fn first_step_lowers_to_20() {
        let d = HeuristicStrategist::new(10.0).decide(&view(30.0, 765_493.0, None, 800_000.0));
        assert_eq!(d.verdict(), Verdict::Continue);
        assert_eq!(d.changes()[0].value, 20.0);
        assert_eq!(d.changes()[0].object_path, "SubNetwork_1/Cell_7");
    }

    #[test]
    fn plateau_at_floor_when_flat() {
        let h = HeuristicStrategist::new(10.0);
        let d = h.decide(&view(10.0, 803_256.7, Some(803_255.0), 805_000.0));
        assert_eq!(d.verdict(), Verdict::Plateau);
        assert!(d.changes().is_empty());
        // Still moving: not a plateau yet.
        let d = h.decide(&view(10.0, 803_256.7, Some(790_000.0), 805_000.0));
        assert_eq!(d.verdict(), Verdict::Continue);
    }

    #[test]
    fn met_target_refines_toward_floor() {
        let h = HeuristicStrategist::new(10.0);
        let d = h.decide(&view(15.0, 802_493.0, Some(799_756.0), 800_000.0));
        assert_eq!(d.verdict(), Verdict::TargetMet);
        assert_eq!(d.changes()[0].value, 12.0);
        let d = h.decide(&view(10.0, 803_256.0, None, 800_000.0));
        assert_eq!(d.verdict(), Verdict::TargetMet);
        assert!(d.changes().is_empty());
    }

    #[test]
    fn less_than_moves_up() {
        let mut v = view(20.0, 799_756.0, None, 780_000.0);
        v.condition = TargetCondition::IsLessThan;
        let d = HeuristicStrategist::new(10.0).decide(&v);
        assert_eq!(d.verdict(), Verdict::Continue);
        assert_eq!(d.changes()[0].value, 30.0);
    }

    #[test]
    fn floor_is_clamped_to_the_constraint_minimum() {
        let d = HeuristicStrategist::new(0.0).decide(&view(12.0, 1.0, None, 800_000.0));
        assert_eq!(d.changes()[0].value, 11.0);
    }
}
