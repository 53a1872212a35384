//! `sensing`: run scenarios, serve the request endpoint, submit and inspect.

mod server;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sensing_core::engine::{self, ArtifactKind, EngineOptions, Listing, RunOptions};
use sensing_core::{ClockMode, DocFormat, Engine, EngineError, ScenarioConfig};

#[derive(Parser)]
#[command(name = "sensing", version, about = "Context-aware sensing middleware")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Scenario config (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Clock driving the pipelines; defaults to the config's setting.
    #[arg(long)]
    clock: Option<ClockMode>,
    /// Directory for delivery files, plan dumps and the run report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Boot a scenario and serve the HTTP endpoint until interrupted.
    Serve {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Run a scenario end to end and write its artifacts.
    RunScenario {
        #[command(flatten)]
        engine: EngineArgs,
        /// Overrides the config's run length.
        #[arg(long)]
        duration_ms: Option<u64>,
    },
    /// Submit a request document, either to a running endpoint or to a
    /// locally booted engine that then runs for --duration-ms.
    Submit {
        request: PathBuf,
        #[arg(long, conflicts_with = "config")]
        endpoint: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        clock: Option<ClockMode>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        duration_ms: u64,
    },
    /// Print a listing: sensors, attributes, plans, operators or subscriptions.
    Inspect {
        kind: String,
        #[arg(long, conflicts_with = "config")]
        endpoint: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Validate SDD, domain, fleet, request or scenario files offline.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Document kind; detected from the content when omitted.
        #[arg(long)]
        kind: Option<ArtifactKind>,
    },
}

/// Exit status for failures outside the engine's own error taxonomy.
const RUNTIME_FAILURE: u8 = 2;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = match e.downcast_ref::<EngineError>() {
                Some(engine_error) => {
                    eprintln!("error [{}]: {engine_error}", engine_error.code());
                    engine_error.exit_code() as u8
                }
                None => {
                    eprintln!("error: {e:#}");
                    RUNTIME_FAILURE
                }
            };
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Serve { engine, addr } => {
            let config = ScenarioConfig::load(&engine.config)?;
            let booted = Engine::boot(
                &config,
                EngineOptions {
                    out_dir: engine.out.clone(),
                    clock_mode: engine.clock,
                },
            )?;
            server::serve(booted, &addr, engine.out)
        }
        Command::RunScenario {
            engine,
            duration_ms,
        } => {
            let config = ScenarioConfig::load(&engine.config)?;
            let out = engine.out.unwrap_or_else(|| PathBuf::from("out"));
            let report = engine::run_scenario(
                &config,
                &RunOptions {
                    out_dir: out.clone(),
                    run_for_ms: duration_ms,
                    clock_mode: engine.clock,
                },
            )?;
            for s in &report.subscriptions {
                println!(
                    "{} {} plan={} delivered={} status={}",
                    s.subscription_id, s.request_id, s.plan_id, s.delivered, s.status
                );
            }
            for f in &report.failed_submissions {
                println!("failed {} [{}]: {}", f.request, f.code, f.message);
            }
            println!("report: {}", out.join("report.json").display());
            Ok(report.exit_code as u8)
        }
        Command::Submit {
            request,
            endpoint,
            config,
            clock,
            out,
            duration_ms,
        } => {
            let bytes = std::fs::read(&request)
                .with_context(|| format!("reading {}", request.display()))?;
            if let Some(endpoint) = endpoint {
                return server::remote_submit(&endpoint, &request, bytes);
            }
            let config_path = config.context("either --endpoint or --config is required")?;
            let config = ScenarioConfig::load(&config_path)?;
            let engine = Engine::boot(
                &config,
                EngineOptions {
                    out_dir: out,
                    clock_mode: clock,
                },
            )?;
            let receipt = engine.submit(&bytes, format_of(&request, &bytes))?;
            engine.run_for(duration_ms);
            let report = engine.shutdown();
            let delivered = report.subscriptions.first().map_or(0, |s| s.delivered);
            print_json(&serde_json::json!({ "receipt": receipt, "delivered": delivered }))?;
            Ok(0)
        }
        Command::Inspect {
            kind,
            endpoint,
            config,
        } => {
            if let Some(endpoint) = endpoint {
                return server::remote_inspect(&endpoint, &kind);
            }
            let listing: Listing = kind.parse()?;
            let config_path = config.context("either --endpoint or --config is required")?;
            let config = ScenarioConfig::load(&config_path)?;
            let engine = Engine::boot(&config, EngineOptions::default())?;
            print_json(&engine.inspect(listing))?;
            Ok(0)
        }
        Command::Validate { files, kind } => {
            let mut status = 0;
            for f in &files {
                match engine::validate_artifact(f, kind) {
                    Ok(k) => println!(
                        "ok {} ({})",
                        f.display(),
                        serde_json::to_value(k)?.as_str().unwrap_or("")
                    ),
                    Err(e) => {
                        println!("invalid {} [{}]: {e}", f.display(), e.code());
                        status = 1;
                    }
                }
            }
            Ok(status)
        }
    }
}

fn format_of(path: &Path, bytes: &[u8]) -> DocFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("toml") => DocFormat::from_path(path),
        _ => DocFormat::sniff(bytes),
    }
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}
