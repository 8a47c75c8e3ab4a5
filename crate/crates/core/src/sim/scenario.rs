use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::sim::pm::Aggregation;

/// Calibrated radio constants for the default scenario.
///
/// Produced by the grid search in `tests/calibration.rs` against the
/// single-run anchors (765493 bit/J at 30 dBm, about 803257 bit/J on the
/// low-power plateau).
pub mod calibrated {
    pub const BANDWIDTH_HZ: f64 = 20e6;
    pub const SE_CAP_BITS_PER_HZ: f64 = 6.0;
    pub const PATHLOSS_EXPONENT: f64 = 3.0;
    pub const REF_LOSS_DB: f64 = 38.0;
    pub const NOISE_FLOOR_DBM: f64 = -93.5;
    pub const DISTANCE_SCALE_M: f64 = 38.4;
    pub const FIXED_POWER_W: f64 = 149.298_197_870_903_24;
    pub const SLOPE_PER_WATT: f64 = 7.463_633_023_298_343;

    /// Relative UE distances (fraction of the farthest UE) for each cell.
    pub const CELL_1_PATTERN: [f64; 10] = [0.35, 0.42, 0.5, 0.57, 0.63, 0.7, 0.77, 0.84, 0.92, 1.0];
    pub const CELL_2_PATTERN: [f64; 8] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    /// Cell_2 sits slightly tighter than the calibrated cell.
    pub const CELL_2_SCALE: f64 = 0.95;
}

/// Physical-layer and power-model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RadioConstants {
    pub bandwidth_hz: f64,
    pub noise_floor_dbm: f64,
    pub se_cap_bits_per_hz: f64,
    /// P0: static draw independent of transmit power.
    pub fixed_power_w: f64,
    /// Δp: watts drawn per radiated watt.
    pub slope_per_watt: f64,
    pub pathloss_exponent: f64,
    pub ref_loss_db: f64,
    /// One list per cell, one distance per UE.
    pub ue_distances_m: Vec<Vec<f64>>,
}

impl Default for RadioConstants {
    fn default() -> Self {
        use calibrated::*;
        Self {
            bandwidth_hz: BANDWIDTH_HZ,
            noise_floor_dbm: NOISE_FLOOR_DBM,
            se_cap_bits_per_hz: SE_CAP_BITS_PER_HZ,
            fixed_power_w: FIXED_POWER_W,
            slope_per_watt: SLOPE_PER_WATT,
            pathloss_exponent: PATHLOSS_EXPONENT,
            ref_loss_db: REF_LOSS_DB,
            ue_distances_m: vec![
                CELL_1_PATTERN.iter().map(|f| f * DISTANCE_SCALE_M).collect(),
                CELL_2_PATTERN
                    .iter()
                    .map(|f| f * DISTANCE_SCALE_M * CELL_2_SCALE)
                    .collect(),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TxPowerConstraints {
    pub min_dbm: f64,
    pub max_dbm: f64,
    pub step_dbm: f64,
}

impl Default for TxPowerConstraints {
    fn default() -> Self {
        Self {
            min_dbm: 10.0,
            max_dbm: 40.0,
            step_dbm: 1.0,
        }
    }
}

impl TxPowerConstraints {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.min_dbm && value <= self.max_dbm
    }

    pub fn on_grid(&self, value: f64) -> bool {
        let k = (value - self.min_dbm) / self.step_dbm;
        (k - k.round()).abs() <= 1e-9
    }

    pub fn admits(&self, value: f64) -> bool {
        value.is_finite() && self.contains(value) && self.on_grid(value)
    }

    /// Every admissible value from min to max.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.max_dbm - self.min_dbm) / self.step_dbm).round() as usize;
        (0..=n).map(|i| self.min_dbm + i as f64 * self.step_dbm).collect()
    }
}

/// Complete description of a simulated deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioConfig {
    pub gnb_count: usize,
    pub ues_per_gnb: Vec<usize>,
    pub tick_seconds: f64,
    pub pm_granularity_ticks: u64,
    pub aggregation: Aggregation,
    pub rng_seed: u64,
    pub radio_constants: RadioConstants,
    #[serde(default = "default_subnetwork")]
    pub subnetwork: String,
    #[serde(default = "default_initial_tx")]
    pub initial_tx_power_dbm: f64,
    #[serde(default)]
    pub tx_power_constraints: TxPowerConstraints,
    /// Extra names resolving to simulated cells, e.g. `Cell_7 -> Cell_1`.
    #[serde(default)]
    pub cell_aliases: BTreeMap<String, String>,
}

fn default_subnetwork() -> String {
    "SubNetwork_1".to_string()
}

fn default_initial_tx() -> f64 {
    30.0
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            gnb_count: 2,
            ues_per_gnb: vec![10, 8],
            tick_seconds: 1.0,
            pm_granularity_ticks: 5,
            aggregation: Aggregation::Mean,
            rng_seed: 42,
            radio_constants: RadioConstants::default(),
            subnetwork: default_subnetwork(),
            initial_tx_power_dbm: default_initial_tx(),
            tx_power_constraints: TxPowerConstraints::default(),
            cell_aliases: BTreeMap::from([("Cell_7".to_string(), "Cell_1".to_string())]),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn cell_id(index: usize) -> String {
        format!("Cell_{}", index + 1)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::Config(m));
        if self.gnb_count < 1 {
            return fail("gnbCount must be at least 1".into());
        }
        if self.gnb_count != self.ues_per_gnb.len() {
            return fail(format!(
                "gnbCount is {} but uesPerGnb has {} entries",
                self.gnb_count,
                self.ues_per_gnb.len()
            ));
        }
        if let Some(i) = self.ues_per_gnb.iter().position(|&n| n < 1) {
            return fail(format!("uesPerGnb[{i}] must be at least 1"));
        }
        if self.pm_granularity_ticks < 1 {
            return fail("pmGranularityTicks must be at least 1".into());
        }
        if !(self.tick_seconds.is_finite() && self.tick_seconds > 0.0) {
            return fail("tickSeconds must be positive".into());
        }
        let rc = &self.radio_constants;
        let positives = [
            ("bandwidthHz", rc.bandwidth_hz),
            ("seCapBitsPerHz", rc.se_cap_bits_per_hz),
            ("fixedPowerW", rc.fixed_power_w),
            ("slopePerWatt", rc.slope_per_watt),
            ("pathlossExponent", rc.pathloss_exponent),
            ("refLossDb", rc.ref_loss_db),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !rc.noise_floor_dbm.is_finite() {
            return fail("noiseFloorDbm must be finite".into());
        }
        if rc.se_cap_bits_per_hz > 10.0 {
            return fail(format!(
                "seCapBitsPerHz must not exceed 10, got {}",
                rc.se_cap_bits_per_hz
            ));
        }
        if rc.ue_distances_m.len() != self.gnb_count {
            return fail(format!(
                "ueDistancesM has {} cells, expected {}",
                rc.ue_distances_m.len(),
                self.gnb_count
            ));
        }
        for (i, (d, &n)) in rc.ue_distances_m.iter().zip(&self.ues_per_gnb).enumerate() {
            if d.len() != n {
                return fail(format!("ueDistancesM[{i}] has {} UEs, uesPerGnb says {n}", d.len()));
            }
            if d.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return fail(format!("ueDistancesM[{i}] must hold positive distances"));
            }
        }
        let c = &self.tx_power_constraints;
        if !(c.step_dbm > 0.0 && c.min_dbm <= c.max_dbm && c.min_dbm.is_finite() && c.max_dbm.is_finite()) {
            return fail("txPowerConstraints need min <= max and step > 0".into());
        }
        if !c.on_grid(c.max_dbm) {
            return fail("txPowerConstraints range must be a multiple of the step".into());
        }
        if !c.admits(self.initial_tx_power_dbm) {
            return fail(format!(
                "initialTxPowerDbm {} is outside the constraint grid",
                self.initial_tx_power_dbm
            ));
        }
        for (alias, target) in &self.cell_aliases {
            let idx = target
                .strip_prefix("Cell_")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1 && n <= self.gnb_count);
            if idx.is_none() {
                return fail(format!("alias {alias:?} points at unknown cell {target:?}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASSET: &str = "assets/scenario_default.json";

    #[test]
    fn bundled_scenario_is_the_default() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(ASSET);
        if std::env::var_os("UPDATE_FIXTURES").is_some() {
            std::fs::write(&path, ScenarioConfig::default().to_json() + "\n").unwrap();
        }
        assert_eq!(ScenarioConfig::load(&path).unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn json_round_trip() {
        let cfg = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(ScenarioConfig::from_json("{}").is_err());
    }
}
