//! Per-cell PM windows and their aggregation.

use serde::{Deserialize, Serialize};

/// How per-tick energy-efficiency samples collapse into one window value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Aggregation {
    Mean,
    Latest,
    Max,
}

/// One completed granularity window for one cell (`PEE.EnergyEfficiency`
/// plus the counters behind it). Ticks are half-open: `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PmReport {
    pub cell_id: String,
    pub window_start_tick: u64,
    pub window_end_tick: u64,
    pub energy_efficiency_bits_per_joule: f64,
    pub throughput_bits: f64,
    pub energy_joules: f64,
    pub tx_power_dbm_at_window_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickSample {
    pub bits: f64,
    pub joules: f64,
    pub tx_power_dbm: f64,
}

impl TickSample {
    pub fn energy_efficiency(&self) -> f64 {
        self.bits / self.joules
    }
}

#[derive(Debug, Clone)]
pub(crate) struct WindowAccumulator {
    start_tick: u64,
    count: u64,
    bits: f64,
    joules: f64,
    mean: f64,
    max: f64,
    latest: f64,
    tx_power_dbm: f64,
}

impl WindowAccumulator {
    pub(crate) fn new(start_tick: u64) -> Self {
        Self {
            start_tick,
            count: 0,
            bits: 0.0,
            joules: 0.0,
            mean: 0.0,
            max: f64::NEG_INFINITY,
            latest: 0.0,
            tx_power_dbm: 0.0,
        }
    }

    pub(crate) fn push(&mut self, s: TickSample) {
        let ee = s.energy_efficiency();
        self.count += 1;
        // Incremental mean: a run of identical samples leaves it bit-exact.
        self.mean += (ee - self.mean) / self.count as f64;
        self.max = self.max.max(ee);
        self.latest = ee;
        self.bits += s.bits;
        self.joules += s.joules;
        self.tx_power_dbm = s.tx_power_dbm;
    }

    pub(crate) fn finish(&self, cell_id: &str, end_tick: u64, method: Aggregation) -> PmReport {
        let ee = match method {
            Aggregation::Mean => self.mean,
            Aggregation::Latest => self.latest,
            Aggregation::Max => self.max,
        };
        PmReport {
            cell_id: cell_id.to_string(),
            window_start_tick: self.start_tick,
            window_end_tick: end_tick,
            energy_efficiency_bits_per_joule: ee,
            throughput_bits: self.bits,
            energy_joules: self.joules,
            tx_power_dbm_at_window_end: self.tx_power_dbm,
        }
    }
}
