use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ibn_cli::{exit, BackendChoice, CliError, RunManifest, DEFAULT_LLM_ENDPOINT};
use ibn_core::inference::DEFAULT_API_KEY_ENV;
use tracing_subscriber::EnvFilter;

/// Intent-based closed-loop management of a simulated RAN.
#[derive(Parser)]
#[command(name = "ibn", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulator commands.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Run the closed loop for one intent.
    Loop {
        #[command(subcommand)]
        cmd: LoopCmd,
    },
    /// Repeatable experiments.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Intent documents.
    Intent {
        #[command(subcommand)]
        cmd: IntentCmd,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// Serve the O1 interface until interrupted.
    Serve {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8300")]
        endpoint: String,
        #[arg(long, default_value_t = 100)]
        tick_millis: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum LoopCmd {
    /// Drive one intent to fulfilment, abandonment or failure.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Simulator to manage; without it a fresh one is started in-process.
        #[arg(long)]
        endpoint: Option<String>,
        /// Overrides the intent's target value (bit/joule).
        #[arg(long)]
        target: Option<f64>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// One attempt per target, each on a reset simulator.
    Precision {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated targets in bit/joule.
        #[arg(long)]
        targets: Option<String>,
    },
    /// Baseline, above-plateau and below-baseline targets.
    Boundary {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Subcommand)]
enum IntentCmd {
    /// Validate an intent against the network topology.
    Check {
        #[arg(long)]
        intent: PathBuf,
        /// Live simulator; without it the scenario topology is used.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Heuristic,
    Remote,
    Replay,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Intent document; defaults to the bundled example.
    #[arg(long)]
    intent: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "heuristic")]
    backend: Backend,
    /// Recorded transcript for the replay backend.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_LLM_ENDPOINT)]
    llm_endpoint: String,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the remote API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long, default_value_t = 100)]
    tick_millis: u64,
    /// Attempt history file (JSON lines).
    #[arg(long)]
    history: Option<PathBuf>,
}

impl RunArgs {
    fn manifest(self, endpoint: Option<String>, target: Option<f64>) -> RunManifest {
        RunManifest {
            scenario_path: self.scenario,
            intent_path: self.intent,
            backend: match self.backend {
                Backend::Heuristic => BackendChoice::Heuristic,
                Backend::Remote => BackendChoice::Remote,
                Backend::Replay => BackendChoice::Replay,
            },
            transcript: self.transcript,
            llm_endpoint: self.llm_endpoint,
            model: self.model,
            api_key_env: self.api_key_env,
            endpoint,
            seed: self.seed,
            tick_millis: self.tick_millis,
            max_iterations: self.max_iterations,
            target,
            history_path: self.history,
            output_dir: self.out,
        }
    }
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

async fn run(cmd: Cmd) -> Result<i32, CliError> {
    match cmd {
        Cmd::Sim {
            cmd:
                SimCmd::Serve {
                    scenario,
                    endpoint,
                    tick_millis,
                    seed,
                },
        } => {
            let scenario = ibn_cli::load_scenario(scenario.as_deref(), seed)?;
            ibn_cli::sim_serve(scenario, &endpoint, tick_millis, shutdown_signal()).await?;
            Ok(exit::OK)
        }
        Cmd::Loop {
            cmd: LoopCmd::Run { run, endpoint, target },
        } => {
            let r = run.manifest(endpoint, target).resolve()?;
            let o = ibn_cli::loop_run(&r).await?;
            println!(
                "{:?} after {} iterations: {}",
                o.status,
                o.iterations.len(),
                o.reason
            );
            println!("artifacts in {}", r.output_dir.display());
            Ok(ibn_cli::exit_code(o.status))
        }
        Cmd::Eval {
            cmd: EvalCmd::Precision { run, targets },
        } => {
            let targets = match targets {
                Some(t) => ibn_cli::parse_targets(&t)?,
                None => ibn_cli::DEFAULT_TARGETS.to_vec(),
            };
            let r = run.manifest(None, None).resolve()?;
            let report = ibn_cli::eval_precision(&r, &targets).await?;
            for row in &report.rows {
                println!(
                    "attempt {}: target {} -> {} in {} iterations ({})",
                    row.attempt, row.target_bits_per_joule, row.result, row.iterations, row.status
                );
            }
            println!("report in {}", r.output_dir.join("fig4.csv").display());
            Ok(if report.wiring_failed { exit::WIRING } else { exit::OK })
        }
        Cmd::Eval {
            cmd: EvalCmd::Boundary { run },
        } => {
            let r = run.manifest(None, None).resolve()?;
            for row in ibn_cli::eval_boundary(&r).await? {
                println!("{:>12.1}  {:<26} {}", row.ee_bits_per_joule, row.description, row.result);
            }
            println!("report in {}", r.output_dir.join("boundary.csv").display());
            Ok(exit::OK)
        }
        Cmd::Intent {
            cmd: IntentCmd::Check {
                intent,
                endpoint,
                scenario,
            },
        } => {
            let scenario = ibn_cli::load_scenario(scenario.as_deref(), None)?;
            let report = ibn_cli::intent_check(&intent, endpoint.as_deref(), &scenario).await?;
            for w in &report.warnings {
                println!("warning: {w}");
            }
            for issue in &report.issues {
                println!("{issue}");
            }
            if report.ok() {
                println!("intent ok");
                Ok(exit::OK)
            } else {
                Ok(exit::CONFIG)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    };
    let code = match rt.block_on(run(cli.cmd)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    };
    ExitCode::from(code as u8)
}
