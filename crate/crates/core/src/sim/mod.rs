//! Discrete-time RAN simulator: static UEs, transmit-power dependent
//! throughput and energy, periodic PM windows.
//!
//! Per UE at distance `d`:
//!
//! ```text
//! rx_dbm  = tx_dbm - (ref_loss_db + 10 * n * log10(d))
//! sinr    = 10^((rx_dbm - noise_floor_dbm) / 10)
//! se      = min(log2(1 + sinr), se_cap)
//! ```
//!
//! Cell throughput is `bandwidth * mean(se)` bit/s and the cell draws
//! `P0 + Δp * 10^((tx_dbm - 30) / 10)` W. The spectral-efficiency cap keeps
//! throughput flat at high power, so energy efficiency rises as power
//! falls until the farthest UEs drop off the cap.

mod pm;
mod scenario;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::NetworkTopology;

pub use pm::{Aggregation, PmReport, TickSample};
pub use scenario::{calibrated, RadioConstants, ScenarioConfig, TxPowerConstraints};

use pm::WindowAccumulator;

/// The only parameter exposed for configuration.
pub const TX_POWER: &str = "txPower";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("unknown cell {0:?}")]
    UnknownCell(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("{value} dBm is outside [{min}, {max}] or off the {step} dB grid")]
    OutOfRange { value: f64, min: f64, max: f64, step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Ue {
    pub distance_m: f64,
    pub azimuth_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub cell_id: String,
    pub tx_power_dbm: f64,
    pub constraints: TxPowerConstraints,
    pub attached_ues: Vec<Ue>,
}

/// Result of `<get-config>` on one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CellConfig {
    pub cell_id: String,
    pub tx_power_dbm: f64,
    pub min_dbm: f64,
    pub max_dbm: f64,
    pub step_dbm: f64,
}

impl CellConfig {
    pub fn constraints(&self) -> TxPowerConstraints {
        TxPowerConstraints {
            min_dbm: self.min_dbm,
            max_dbm: self.max_dbm,
            step_dbm: self.step_dbm,
        }
    }
}

/// Result of `<edit-config>`; the new value applies from `effective_tick`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AppliedChange {
    pub cell_id: String,
    pub parameter: String,
    pub old_value: f64,
    pub new_value: f64,
    pub effective_tick: u64,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: ScenarioConfig,
    cells: Vec<CellState>,
    windows: Vec<WindowAccumulator>,
    now: u64,
}

impl Network {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let cells = config
            .radio_constants
            .ue_distances_m
            .iter()
            .enumerate()
            .map(|(i, distances)| CellState {
                cell_id: ScenarioConfig::cell_id(i),
                tx_power_dbm: config.initial_tx_power_dbm,
                constraints: config.tx_power_constraints,
                attached_ues: distances
                    .iter()
                    .map(|&distance_m| Ue {
                        distance_m,
                        azimuth_rad: rng.random_range(0.0..std::f64::consts::TAU),
                    })
                    .collect(),
            })
            .collect::<Vec<_>>();
        let windows = cells.iter().map(|_| WindowAccumulator::new(0)).collect();
        Ok(Self {
            config,
            cells,
            windows,
            now: 0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    /// Index of the next tick to be simulated.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn topology(&self) -> NetworkTopology {
        NetworkTopology {
            subnetwork: self.config.subnetwork.clone(),
            cells: self.cells.iter().map(|c| c.cell_id.clone()).collect(),
            aliases: self.config.cell_aliases.clone(),
        }
    }

    fn index_of(&self, cell_id: &str) -> Result<usize, SimError> {
        let canonical = self
            .config
            .cell_aliases
            .get(cell_id)
            .map(String::as_str)
            .unwrap_or(cell_id);
        self.cells
            .iter()
            .position(|c| c.cell_id == canonical)
            .ok_or_else(|| SimError::UnknownCell(cell_id.to_string()))
    }

    /// Canonical id for a cell name or alias.
    pub fn resolve(&self, cell_id: &str) -> Result<&str, SimError> {
        self.index_of(cell_id).map(|i| self.cells[i].cell_id.as_str())
    }

    /// Advances `ticks` ticks and returns the PM reports of every window that
    /// completed, in window order then cell order.
    pub fn step(&mut self, ticks: u64) -> Vec<PmReport> {
        let g = self.config.pm_granularity_ticks;
        let mut reports = Vec::new();
        for _ in 0..ticks {
            for (i, cell) in self.cells.iter().enumerate() {
                let s = self.sample(cell, cell.tx_power_dbm);
                self.windows[i].push(s);
            }
            self.now += 1;
            if self.now.is_multiple_of(g) {
                for (i, cell) in self.cells.iter().enumerate() {
                    reports.push(self.windows[i].finish(&cell.cell_id, self.now, self.config.aggregation));
                    self.windows[i] = WindowAccumulator::new(self.now);
                }
            }
        }
        reports
    }

    pub fn apply_config(&mut self, cell_id: &str, parameter: &str, value: f64) -> Result<AppliedChange, SimError> {
        let idx = self.index_of(cell_id)?;
        if parameter != TX_POWER {
            return Err(SimError::UnknownParameter(parameter.to_string()));
        }
        let cell = &mut self.cells[idx];
        let c = cell.constraints;
        if !c.admits(value) {
            return Err(SimError::OutOfRange {
                value,
                min: c.min_dbm,
                max: c.max_dbm,
                step: c.step_dbm,
            });
        }
        let old_value = cell.tx_power_dbm;
        cell.tx_power_dbm = value;
        Ok(AppliedChange {
            cell_id: cell.cell_id.clone(),
            parameter: TX_POWER.to_string(),
            old_value,
            new_value: value,
            effective_tick: self.now,
        })
    }

    pub fn read_config(&self, cell_id: &str) -> Result<CellConfig, SimError> {
        let cell = &self.cells[self.index_of(cell_id)?];
        Ok(CellConfig {
            cell_id: cell.cell_id.clone(),
            tx_power_dbm: cell.tx_power_dbm,
            min_dbm: cell.constraints.min_dbm,
            max_dbm: cell.constraints.max_dbm,
            step_dbm: cell.constraints.step_dbm,
        })
    }

    /// Steady-state energy efficiency for each transmit power in `sweep`.
    pub fn ee_curve(&self, cell_id: &str, sweep: &[f64]) -> Result<Vec<(f64, f64)>, SimError> {
        let cell = &self.cells[self.index_of(cell_id)?];
        let c = cell.constraints;
        sweep
            .iter()
            .map(|&tx| {
                if !(tx.is_finite() && c.contains(tx)) {
                    return Err(SimError::OutOfRange {
                        value: tx,
                        min: c.min_dbm,
                        max: c.max_dbm,
                        step: c.step_dbm,
                    });
                }
                Ok((tx, self.sample(cell, tx).energy_efficiency()))
            })
            .collect()
    }

    /// Bits and joules one cell produces during one tick at `tx_power_dbm`.
    pub fn sample(&self, cell: &CellState, tx_power_dbm: f64) -> TickSample {
        let rc = &self.config.radio_constants;
        let dt = self.config.tick_seconds;
        TickSample {
            bits: cell_rate_bps(rc, &cell.attached_ues, tx_power_dbm) * dt,
            joules: power_draw_w(rc, tx_power_dbm) * dt,
            tx_power_dbm,
        }
    }

    /// Per-cell throughput, used by dashboards and tests.
    pub fn cell_rates(&self) -> BTreeMap<String, f64> {
        self.cells
            .iter()
            .map(|c| {
                (
                    c.cell_id.clone(),
                    cell_rate_bps(&self.config.radio_constants, &c.attached_ues, c.tx_power_dbm),
                )
            })
            .collect()
    }
}

/// Renders an `ee_curve` sweep as CSV with header `txPowerDbm,eeBitsPerJoule`.
pub fn sweep_csv(rows: &[(f64, f64)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["txPowerDbm", "eeBitsPerJoule"]).expect("in-memory write");
    for (tx, ee) in rows {
        w.write_record([tx.to_string(), ee.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

fn cell_rate_bps(rc: &RadioConstants, ues: &[Ue], tx_power_dbm: f64) -> f64 {
    let se_sum: f64 = ues
        .iter()
        .map(|ue| {
            let loss = rc.ref_loss_db + 10.0 * rc.pathloss_exponent * ue.distance_m.log10();
            let sinr = 10f64.powf((tx_power_dbm - loss - rc.noise_floor_dbm) / 10.0);
            (1.0 + sinr).log2().min(rc.se_cap_bits_per_hz)
        })
        .sum();
    rc.bandwidth_hz * se_sum / ues.len() as f64
}

fn power_draw_w(rc: &RadioConstants, tx_power_dbm: f64) -> f64 {
    rc.fixed_power_w + rc.slope_per_watt * 10f64.powf((tx_power_dbm - 30.0) / 10.0)
}
