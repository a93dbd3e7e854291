//! `tapeloop` command line: a thin client of the HTTP API, plus local mode
//! that runs everything in-process against the data dir.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tapeloop_core::bus::{read_log, replay_log};
use tapeloop_core::llm::{BackendDescriptor, BackendRegistry};
use tapeloop_core::metrics::{
    aggregate_table, compare_zero_shot, compute_run_metrics, mas_coverage, render_table, CoverageRows,
};
use tapeloop_core::model::RunConfig;
use tapeloop_core::tooling::{load_scenario, AdapterConfig};

use crate::api::{router, run_report, RunReport};
use crate::store::{load_archived, CreateRunRequest, HitlMode, RunSource, RunStore, RunSummary};

pub const DATA_DIR_ENV: &str = "TAPELOOP_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "tapeloop",
    version,
    about = "Multi-agent RTL design and formal verification runs"
)]
pub struct Cli {
    /// Run store directory.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start a run, on a server or in-process with `--local`.
    Run(RunArgs),
    /// Replay a stored run and check every recorded state hash.
    Replay { run_id: String },
    /// Print a run's sign-off report, gate failures and metrics.
    Report {
        run_id: String,
        #[arg(long)]
        server: Option<String>,
    },
    /// Benchmark tables over stored runs.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Scenario file checks.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Design specification document.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Execute in-process instead of through a server.
    #[arg(long)]
    pub local: bool,
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub server: String,
    /// Who answers escalations. Local runs with a scenario default to its scripts.
    #[arg(long, value_enum)]
    pub hitl: Option<HitlArg>,
    /// Print event frames until the run ends (server mode).
    #[arg(long)]
    pub follow: bool,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HitlArg {
    External,
    Scripted,
}

impl From<HitlArg> for HitlMode {
    fn from(a: HitlArg) -> Self {
        match a {
            HitlArg::External => HitlMode::External,
            HitlArg::Scripted => HitlMode::Scripted,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct RegistryArgs {
    /// JSON list of backend descriptors, registered next to `mock`.
    #[arg(long)]
    pub backends: Option<PathBuf>,
    /// Tool adapter configuration for runs without a scenario.
    #[arg(long)]
    pub adapters: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// Benchmark table over stored runs.
    Table {
        #[arg(required = true)]
        run_ids: Vec<String>,
        /// Zero-shot coverage rows to compare the autonomous coverage against.
        #[arg(long)]
        zero_shot: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Schema-check a scenario and dry-run it at each of its temperatures.
    Validate { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[command(flatten)]
    pub registry: RegistryArgs,
}

impl RegistryArgs {
    pub fn registry(&self) -> Result<BackendRegistry> {
        let mut registry = BackendRegistry::with_mock();
        if let Some(path) = &self.backends {
            let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
            let descs: Vec<BackendDescriptor> =
                serde_json::from_str(&text).with_context(|| path.display().to_string())?;
            for d in descs {
                registry.register(d)?;
            }
        }
        Ok(registry)
    }

    pub fn adapters(&self) -> Result<Option<AdapterConfig>> {
        self.adapters
            .as_ref()
            .map(|p| AdapterConfig::load(p).with_context(|| p.display().to_string()))
            .transpose()
    }

    pub fn open_store(&self, data_dir: &Path) -> Result<RunStore> {
        Ok(RunStore::open(data_dir, self.registry()?, self.adapters()?)?)
    }
}

pub fn main_with(cli: Cli) -> Result<()> {
    let out = &mut std::io::stdout().lock();
    match cli.command {
        Command::Run(args) => run(&cli.data_dir, args, out),
        Command::Replay { run_id } => replay(&cli.data_dir, &run_id, out),
        Command::Report { run_id, server } => {
            let report: RunReport = match server {
                Some(server) => get_json(&format!("{}/runs/{run_id}/report", server.trim_end_matches('/')))?,
                None => run_report(&RunSource::Archived(Arc::new(load_archived(&log_path(
                    &cli.data_dir,
                    &run_id,
                ))?))),
            };
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(())
        }
        Command::Metrics(MetricsCommand::Table {
            run_ids,
            zero_shot,
            json,
        }) => metrics_table(&cli.data_dir, &run_ids, zero_shot.as_deref(), json, out),
        Command::Scenario(ScenarioCommand::Validate { file }) => match load_scenario(&file) {
            Ok(s) => {
                writeln!(
                    out,
                    "{}: ok ({}, temperatures {:?})",
                    file.display(),
                    s.design_id,
                    s.temperatures
                )?;
                Ok(())
            }
            Err(e) => bail!("{}: {e}", file.display()),
        },
        Command::Serve(args) => serve(&cli.data_dir, args),
    }
}

fn log_path(data_dir: &Path, run_id: &str) -> PathBuf {
    data_dir.join("runs").join(run_id).join("events.jsonl")
}

fn get_json<T: serde::de::DeserializeOwned>(url: &str) -> Result<T> {
    let resp = reqwest::blocking::get(url)?;
    let status = resp.status();
    let text = resp.text()?;
    if !status.is_success() {
        bail!("{url}: {status}: {text}");
    }
    Ok(serde_json::from_str(&text)?)
}

fn run(data_dir: &Path, args: RunArgs, out: &mut impl Write) -> Result<()> {
    let config_text = fs::read_to_string(&args.config).with_context(|| args.config.display().to_string())?;
    let config: RunConfig = serde_json::from_str(&config_text).with_context(|| args.config.display().to_string())?;
    let spec = fs::read_to_string(&args.spec).with_context(|| args.spec.display().to_string())?;
    let scenario = args.scenario.clone().or_else(|| config.scenario_path.clone());
    let hitl = match (args.hitl, args.local, &scenario) {
        (Some(h), _, _) => h.into(),
        (None, true, Some(_)) => HitlMode::Scripted,
        _ => HitlMode::External,
    };
    let req = CreateRunRequest {
        config,
        spec,
        scenario: scenario.map(|p| fs::canonicalize(&p).unwrap_or(p)),
        hitl,
    };

    if args.local {
        let store = args.registry.open_store(data_dir)?;
        let summary = store.create_run(req)?;
        let RunSource::Live(handle) = store.source(summary.run_id.as_str())? else {
            bail!("run {} is not live", summary.run_id);
        };
        let mut last = 0;
        while !handle.is_terminal() {
            let seq = handle.wait_for(last, Duration::from_secs(5));
            if seq == last && handle.state().open_tickets().count() > 0 && hitl == HitlMode::External {
                eprintln!(
                    "run {} is waiting on an escalation; resolve it through a server",
                    summary.run_id
                );
            }
            last = seq;
        }
        // The run thread writes signoff.json after the terminal event.
        std::thread::sleep(Duration::from_millis(50));
        let report = run_report(&RunSource::Live(handle));
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        if report.signoff.is_none() {
            bail!("run {} ended in {}", report.run_id, report.phase);
        }
        return Ok(());
    }

    let base = args.server.trim_end_matches('/');
    let resp = reqwest::blocking::Client::new()
        .post(format!("{base}/runs"))
        .json(&req)
        .send()?;
    let status = resp.status();
    let text = resp.text()?;
    if !status.is_success() {
        bail!("{status}: {text}");
    }
    let summary: RunSummary = serde_json::from_str(&text)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    if args.follow {
        follow(&format!("{base}/runs/{}/events?from=1", summary.run_id), out)?;
    }
    Ok(())
}

/// Prints the `data:` line of every frame on an event stream.
fn follow(url: &str, out: &mut impl Write) -> Result<()> {
    let client = reqwest::blocking::Client::builder().timeout(None).build()?;
    let resp = client.get(url).send()?.error_for_status()?;
    for line in BufReader::new(resp).lines() {
        let line = line?;
        if let Some(data) = line.strip_prefix("data:") {
            writeln!(out, "{}", data.trim_start())?;
        }
    }
    Ok(())
}

fn replay(data_dir: &Path, run_id: &str, out: &mut impl Write) -> Result<()> {
    let path = log_path(data_dir, run_id);
    let records = read_log(&path).with_context(|| path.display().to_string())?;
    let state = replay_log(&records)?;
    let last = records
        .last()
        .map(|r| r.state_hash_after.to_string())
        .unwrap_or_default();
    writeln!(
        out,
        "{run_id}: {} records, phase {}, final hash {last}",
        records.len(),
        state.phase
    )?;
    Ok(())
}

fn metrics_table(
    data_dir: &Path,
    run_ids: &[String],
    zero_shot: Option<&Path>,
    json: bool,
    out: &mut impl Write,
) -> Result<()> {
    let mut rows = Vec::new();
    for id in run_ids {
        let path = log_path(data_dir, id);
        let records = read_log(&path).with_context(|| path.display().to_string())?;
        rows.push(compute_run_metrics(&records).with_context(|| id.clone())?);
    }
    let comparison = match zero_shot {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
            let zs: CoverageRows = serde_json::from_str(&text).with_context(|| path.display().to_string())?;
            let mas = mas_coverage(&rows);
            // The zero-shot file may cover more designs than these runs.
            let zs: Vec<_> = zs
                .rows
                .into_iter()
                .filter(|z| mas.iter().any(|m| m.design_id == z.design_id))
                .collect();
            Some(compare_zero_shot(&mas, &zs)?)
        }
        None => None,
    };
    let table = aggregate_table(rows)?;
    if json {
        let value = serde_json::json!({ "table": table, "zero_shot": comparison });
        writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
        return Ok(());
    }
    write!(out, "{}", render_table(&table))?;
    if let Some(c) = comparison {
        writeln!(out)?;
        for d in &c.deltas {
            writeln!(
                out,
                "{}: mas {:.2} zero-shot {:.2} delta {:+.2}",
                d.design_id, d.mas_pct, d.zero_shot_pct, d.delta
            )?;
        }
        writeln!(out, "mean delta {:+.3}", c.mean_delta)?;
    }
    Ok(())
}

fn serve(data_dir: &Path, args: ServeArgs) -> Result<()> {
    let store = Arc::new(args.registry.open_store(data_dir)?);
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(addr = %listener.local_addr()?, data_dir = %data_dir.display(), "serving");
        axum::serve(listener, router(store)).await?;
        Ok(())
    })
}
