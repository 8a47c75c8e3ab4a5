//! Commands behind the `ibn` binary: serve the simulator, run one intent,
//! and the precision and boundary evaluations.

pub mod svg;

use std::fmt;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ibn_core::closed_loop::{emit_trace, run_intent, LoopConfig, LoopOutcome, LoopStatus, Wiring};
use ibn_core::history::{default_templates, HistoryStore};
use ibn_core::inference::{build_backend, BackendKind, InferenceParams, StrategyBackend, DEFAULT_API_KEY_ENV};
use ibn_core::intent::{parse_intent_with_warnings, validate_intent, Intent, Severity, ValidationIssue};
use ibn_core::o1::{serve, O1Client, Pacing, ServerHandle};
use ibn_core::prompt::PromptTemplate;
use ibn_core::sim::{Network, ScenarioConfig};
use serde::{Deserialize, Serialize};
use tracing::info;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const ABANDONED: i32 = 3;
    pub const FAILED: i32 = 4;
    pub const WIRING: i32 = 5;
    pub const USAGE: i32 = 64;
}

pub const EXAMPLE_INTENT: &str = include_str!("../../core/assets/intents/cell7_energy_efficiency.json");

pub const DEFAULT_TARGETS: [f64; 7] = [800_000.0, 800_000.0, 800_000.0, 800_000.0, 800_000.0, 803_000.0, 805_000.0];
pub const BELOW_BASELINE_TARGET: f64 = 750_000.0;
pub const ABOVE_PLATEAU_TARGET: f64 = 805_000.0;
pub const DEFAULT_LLM_ENDPOINT: &str = "https://integrate.api.nvidia.com/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        Self {
            code: exit::USAGE,
            message: m.into(),
        }
    }

    pub fn config(m: impl Into<String>) -> Self {
        Self {
            code: exit::CONFIG,
            message: m.into(),
        }
    }

    pub fn wiring(m: impl Into<String>) -> Self {
        Self {
            code: exit::WIRING,
            message: m.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code(status: LoopStatus) -> i32 {
    match status {
        LoopStatus::Fulfilled | LoopStatus::AlreadySatisfied => exit::OK,
        LoopStatus::Abandoned => exit::ABANDONED,
        LoopStatus::Failed => exit::FAILED,
    }
}

pub fn succeeded(status: LoopStatus) -> bool {
    matches!(status, LoopStatus::Fulfilled | LoopStatus::AlreadySatisfied)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Heuristic,
    Remote,
    Replay,
}

/// Everything a run needs, as given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub scenario_path: Option<PathBuf>,
    /// `None` runs the bundled example intent.
    pub intent_path: Option<PathBuf>,
    pub backend: BackendChoice,
    pub transcript: Option<PathBuf>,
    pub llm_endpoint: String,
    pub model: Option<String>,
    pub api_key_env: String,
    /// Simulator to drive; `None` hosts one in-process.
    pub endpoint: Option<String>,
    pub seed: Option<u64>,
    pub tick_millis: u64,
    pub max_iterations: Option<u32>,
    /// Replaces the value of the intent's target.
    pub target: Option<f64>,
    pub history_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            scenario_path: None,
            intent_path: None,
            backend: BackendChoice::Heuristic,
            transcript: None,
            llm_endpoint: DEFAULT_LLM_ENDPOINT.into(),
            model: None,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            endpoint: None,
            seed: None,
            tick_millis: 100,
            max_iterations: None,
            target: None,
            history_path: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// A manifest with every file loaded and the output directory in place.
pub struct Resolved {
    pub scenario: ScenarioConfig,
    pub intent: Intent,
    pub backend: Arc<dyn StrategyBackend>,
    pub loop_config: LoopConfig,
    pub endpoint: Option<String>,
    pub tick_millis: u64,
    pub history_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
}

pub fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut scenario = match path {
        Some(p) => ScenarioConfig::load(p).map_err(|e| CliError::config(e.to_string()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = seed {
        scenario.rng_seed = seed;
    }
    Ok(scenario)
}

impl RunManifest {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        if self.tick_millis == 0 {
            return Err(CliError::config("--tick-millis must be at least 1"));
        }
        let scenario = load_scenario(self.scenario_path.as_deref(), self.seed)?;
        let text = match &self.intent_path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?,
            None => EXAMPLE_INTENT.to_string(),
        };
        let parsed = parse_intent_with_warnings(&text).map_err(|e| CliError::config(e.to_string()))?;
        for w in &parsed.warnings {
            tracing::warn!("{w}");
        }
        let mut intent = parsed.intent;
        if let Some(t) = self.target {
            intent = intent.with_target_value(t).map_err(|e| CliError::config(e.to_string()))?;
        }
        let mut loop_config = LoopConfig::default();
        if let Some(n) = self.max_iterations {
            loop_config.max_iterations = n;
        }
        loop_config.validate().map_err(CliError::config)?;

        let kind = match self.backend {
            BackendChoice::Heuristic => BackendKind::Heuristic {
                floor_dbm: scenario.tx_power_constraints.min_dbm,
            },
            BackendChoice::Replay => BackendKind::Replay {
                transcript: absolute(
                    self.transcript
                        .as_deref()
                        .ok_or_else(|| CliError::usage("--backend replay needs --transcript"))?,
                )?,
            },
            BackendChoice::Remote => BackendKind::Remote {
                endpoint: self.llm_endpoint.clone(),
                params: InferenceParams {
                    model: self.model.clone().unwrap_or_else(|| InferenceParams::default().model),
                    ..Default::default()
                },
                api_key_env: self.api_key_env.clone(),
            },
        };
        let backend = build_backend(&kind).map_err(|e| CliError::config(e.to_string()))?;

        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::config(format!("{}: {e}", self.output_dir.display())))?;
        Ok(Resolved {
            scenario,
            intent,
            backend,
            loop_config,
            endpoint: self.endpoint.clone(),
            tick_millis: self.tick_millis,
            history_path: self.history_path.as_deref().map(absolute).transpose()?,
            output_dir: absolute(&self.output_dir)?,
        })
    }
}

/// Starts a fresh simulator on a loopback port.
pub async fn self_host(scenario: &ScenarioConfig, tick_millis: u64) -> Result<ServerHandle, CliError> {
    let net = Network::new(scenario.clone()).map_err(|e| CliError::config(e.to_string()))?;
    serve(net, "127.0.0.1:0", Pacing::from_tick_millis(tick_millis))
        .await
        .map_err(|e| CliError::config(e.to_string()))
}

async fn connect(addr: &str) -> Result<O1Client, CliError> {
    O1Client::connect(addr)
        .await
        .map_err(|e| CliError::wiring(format!("simulator at {addr}: {e}")))
}

fn open_store(path: Option<&Path>) -> Result<HistoryStore, CliError> {
    match path {
        Some(p) => HistoryStore::open(p).map_err(|e| CliError::config(e.to_string())),
        None => Ok(HistoryStore::in_memory()),
    }
}

async fn drive(
    client: &O1Client,
    store: &mut HistoryStore,
    intent: &Intent,
    r: &Resolved,
) -> Result<LoopOutcome, CliError> {
    let templates = default_templates();
    let template = PromptTemplate::default();
    run_intent(
        intent,
        &r.loop_config,
        Wiring {
            client,
            store,
            templates: &templates,
            template: &template,
            backend: r.backend.as_ref(),
        },
    )
    .await
    .map_err(|e| CliError::wiring(e.to_string()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Runs one intent and writes `trace.csv`, `outcome.json` and `fig3.svg`.
pub async fn loop_run(r: &Resolved) -> Result<LoopOutcome, CliError> {
    let (server, addr) = match &r.endpoint {
        Some(e) => (None, e.clone()),
        None => {
            let s = self_host(&r.scenario, r.tick_millis).await?;
            let a = s.local_addr().to_string();
            (Some(s), a)
        }
    };
    let history = r.history_path.clone().unwrap_or_else(|| r.output_dir.join("history.jsonl"));
    let mut store = open_store(Some(&history))?;
    let client = connect(&addr).await?;
    let outcome = drive(&client, &mut store, &r.intent, r).await;
    if let Some(s) = server {
        s.shutdown().await;
    }
    let outcome = outcome?;
    let trace = r.output_dir.join("trace.csv");
    emit_trace(&outcome, &trace).map_err(|e| CliError::config(format!("{}: {e}", trace.display())))?;
    write(&r.output_dir.join("outcome.json"), outcome.to_json())?;
    write(&r.output_dir.join("fig3.svg"), svg::trajectory(&outcome))?;
    Ok(outcome)
}

/// One row of `fig4.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AttemptRow {
    pub attempt: usize,
    pub target_bits_per_joule: f64,
    pub iterations: usize,
    pub status: String,
    pub result: String,
    pub final_tx_power_dbm: f64,
    pub final_ee_bits_per_joule: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionReport {
    pub rows: Vec<AttemptRow>,
    /// Some attempt lost its simulator connection.
    pub wiring_failed: bool,
}

fn result_label(ok: bool) -> &'static str {
    if ok {
        "Success"
    } else {
        "Fail"
    }
}

async fn fresh_attempt(r: &Resolved, intent: &Intent, store: &mut HistoryStore) -> Result<LoopOutcome, CliError> {
    let server = self_host(&r.scenario, r.tick_millis).await?;
    let client = connect(&server.local_addr().to_string()).await;
    let outcome = match client {
        Ok(c) => drive(&c, store, intent, r).await,
        Err(e) => Err(e),
    };
    server.shutdown().await;
    outcome
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::config(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// One attempt per target, each against a freshly started simulator.
/// Attempts share one history store. Writes `fig4.csv`, `fig4.svg` and
/// `attempt-N.json` even when an attempt breaks.
pub async fn eval_precision(r: &Resolved, targets: &[f64]) -> Result<PrecisionReport, CliError> {
    if targets.is_empty() {
        return Err(CliError::usage("no targets given"));
    }
    let mut store = open_store(r.history_path.as_deref())?;
    let mut rows = Vec::new();
    let mut wiring_failed = false;
    for (i, &target) in targets.iter().enumerate() {
        let n = i + 1;
        let intent = r.intent.with_target_value(target).map_err(|e| CliError::config(e.to_string()))?;
        info!(attempt = n, target, "starting attempt");
        let row = match fresh_attempt(r, &intent, &mut store).await {
            Ok(o) => {
                write(&r.output_dir.join(format!("attempt-{n}.json")), o.to_json())?;
                let last = o.final_point();
                AttemptRow {
                    attempt: n,
                    target_bits_per_joule: target,
                    iterations: o.iterations.len(),
                    status: format!("{:?}", o.status),
                    result: result_label(succeeded(o.status)).into(),
                    final_tx_power_dbm: last.tx_power_dbm,
                    final_ee_bits_per_joule: last.ee_bits_per_joule,
                    reason: o.reason,
                }
            }
            Err(e) if e.code == exit::WIRING => {
                wiring_failed = true;
                AttemptRow {
                    attempt: n,
                    target_bits_per_joule: target,
                    iterations: 0,
                    status: "WiringError".into(),
                    result: result_label(false).into(),
                    final_tx_power_dbm: f64::NAN,
                    final_ee_bits_per_joule: f64::NAN,
                    reason: e.message,
                }
            }
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    write_csv(&r.output_dir.join("fig4.csv"), &rows)?;
    let bars: Vec<svg::Bar> = rows
        .iter()
        .map(|row| svg::Bar {
            label: svg::ordinal(row.attempt),
            value: row.iterations as u32,
            success: row.result == "Success",
        })
        .collect();
    write(&r.output_dir.join("fig4.svg"), svg::attempts(&bars))?;
    Ok(PrecisionReport { rows, wiring_failed })
}

/// One row of `boundary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundaryRow {
    pub ee_bits_per_joule: f64,
    pub description: String,
    pub result: String,
    pub status: String,
    pub iterations: usize,
    pub edits_issued: u32,
    pub final_ee_bits_per_joule: f64,
}

/// EE of the first PM window, before anything is configured.
pub async fn measure_baseline(r: &Resolved) -> Result<f64, CliError> {
    let server = self_host(&r.scenario, r.tick_millis).await?;
    let measured = async {
        let client = connect(&server.local_addr().to_string()).await?;
        let cell = r.intent.scope().primary_cell().to_string();
        let mut sub = client
            .pm_subscribe(Some(vec![cell]))
            .await
            .map_err(|e| CliError::wiring(e.to_string()))?;
        let canonical = sub.cells()[0].clone();
        sub.next_for(&canonical, 0, r.loop_config.iteration_timeout)
            .await
            .map(|rep| rep.energy_efficiency_bits_per_joule)
            .map_err(|e| CliError::wiring(e.to_string()))
    }
    .await;
    server.shutdown().await;
    measured
}

/// Baseline, a target above the plateau and one below the baseline, each
/// against a fresh simulator. Writes `boundary.csv`.
pub async fn eval_boundary(r: &Resolved) -> Result<Vec<BoundaryRow>, CliError> {
    let baseline = measure_baseline(r).await?;
    let mut rows = vec![BoundaryRow {
        ee_bits_per_joule: baseline,
        description: "Baseline".into(),
        result: "-".into(),
        status: "Baseline".into(),
        iterations: 0,
        edits_issued: 0,
        final_ee_bits_per_joule: baseline,
    }];
    for (target, description) in [
        (ABOVE_PLATEAU_TARGET, "Above Baseline Threshold"),
        (BELOW_BASELINE_TARGET, "Below Baseline Threshold"),
    ] {
        let intent = r.intent.with_target_value(target).map_err(|e| CliError::config(e.to_string()))?;
        let mut store = HistoryStore::in_memory();
        let o = fresh_attempt(r, &intent, &mut store).await?;
        rows.push(BoundaryRow {
            ee_bits_per_joule: target,
            description: description.into(),
            result: if succeeded(o.status) { "Passed" } else { "Failed" }.into(),
            status: format!("{:?}", o.status),
            iterations: o.iterations.len(),
            edits_issued: o.edits_issued,
            final_ee_bits_per_joule: o.final_point().ee_bits_per_joule,
        });
    }
    write_csv(&r.output_dir.join("boundary.csv"), &rows)?;
    Ok(rows)
}

/// Serves the simulator until `shutdown` resolves, logging every PM window.
pub async fn sim_serve(
    scenario: ScenarioConfig,
    endpoint: &str,
    tick_millis: u64,
    shutdown: impl Future<Output = ()>,
) -> Result<(), CliError> {
    if tick_millis == 0 {
        return Err(CliError::config("--tick-millis must be at least 1"));
    }
    let net = Network::new(scenario.clone()).map_err(|e| CliError::config(e.to_string()))?;
    let topo = net.topology();
    let handle = serve(net, endpoint, Pacing::from_tick_millis(tick_millis))
        .await
        .map_err(|e| CliError::config(e.to_string()))?;
    info!(
        "serving {} with {} cells ({}) on {}; PM window every {} ticks of {} ms",
        topo.subnetwork,
        topo.cells.len(),
        topo.cells.join(", "),
        handle.local_addr(),
        scenario.pm_granularity_ticks,
        tick_millis
    );
    let addr = handle.local_addr();
    let logger = tokio::spawn(async move {
        let Ok(client) = O1Client::connect(addr).await else { return };
        let Ok(mut sub) = client.pm_subscribe(None).await else { return };
        while let Ok(r) = sub.next(std::time::Duration::from_secs(3600)).await {
            info!(
                cell = %r.cell_id,
                window = %format!("[{}, {})", r.window_start_tick, r.window_end_tick),
                tx_power_dbm = r.tx_power_dbm_at_window_end,
                ee = r.energy_efficiency_bits_per_joule,
                "PM window"
            );
        }
    });
    shutdown.await;
    info!("shutting down");
    handle.shutdown().await;
    let _ = logger.await;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub issues: Vec<ValidationIssue>,
    pub warnings: Vec<String>,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.issues.iter().all(|i| i.severity != Severity::Error)
    }
}

/// Parses an intent and validates it against the live topology at
/// `endpoint`, or against the scenario when no endpoint is given.
pub async fn intent_check(
    path: &Path,
    endpoint: Option<&str>,
    scenario: &ScenarioConfig,
) -> Result<CheckReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let parsed = parse_intent_with_warnings(&text).map_err(|e| CliError::config(e.to_string()))?;
    let subnetwork = parsed.intent.scope().object_instance();
    let issues = match endpoint {
        Some(addr) => {
            let client = connect(addr).await?;
            match client.get_topology(subnetwork).await {
                Ok(topo) => validate_intent(&parsed.intent, &topo),
                Err(ibn_core::o1::O1Error::Remote { message, .. }) => vec![ValidationIssue {
                    severity: Severity::Error,
                    message,
                }],
                Err(e) => return Err(CliError::wiring(e.to_string())),
            }
        }
        None => {
            let net = Network::new(scenario.clone()).map_err(|e| CliError::config(e.to_string()))?;
            validate_intent(&parsed.intent, &net.topology())
        }
    };
    Ok(CheckReport {
        issues,
        warnings: parsed.warnings,
    })
}

/// Parses `--targets`: comma separated bit/joule values.
pub fn parse_targets(s: &str) -> Result<Vec<f64>, CliError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(CliError::usage("--targets is empty"));
    }
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| CliError::usage(format!("bad target {t:?}")))
        })
        .collect()
}
