//! The run store: live runs by handle, finished runs by their event logs
//! under `<data_dir>/runs/<id>/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::thread;

use serde::{Deserialize, Serialize};

use tapeloop_core::bus::{read_log, replay_log, EventLog, EventRecord};
use tapeloop_core::hitl::{list_pending, EscalationTicket, HitlError, Resolution, ResolutionBody, TicketFilter};
use tapeloop_core::llm::{BackendKind, BackendRegistry, LlmError};
use tapeloop_core::model::{validate_specification, Phase, RunConfig, RunId, TicketId, ValidationError};
use tapeloop_core::tooling::{parse_scenario, AdapterConfig, Scenario, Toolchain};
use tapeloop_core::workflow::{
    ExecError, Executor, ExternalReviewer, Reviewer, RunHandle, RunSetup, RunState, ScriptedResolver,
};

/// Markers used when a run has no scenario to supply its own.
pub const DEFAULT_PLACEHOLDER_MARKERS: [&str; 3] = ["TODO", "FIXME", "PLACEHOLDER"];

/// Who answers a run's escalation tickets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HitlMode {
    /// Resolutions arrive through the resolution endpoint.
    #[default]
    External,
    /// The scenario's HITL scripts answer.
    Scripted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRunRequest {
    pub config: RunConfig,
    /// Specification document text.
    pub spec: String,
    /// Scenario file; falls back to `config.scenario_path`.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub hitl: HitlMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: RunId,
    pub design_id: String,
    pub phase: Phase,
    pub open_ticket_count: usize,
    pub latest_seq: u64,
    pub coverage_pct: Option<f64>,
}

impl RunSummary {
    pub fn of(state: &RunState) -> Self {
        Self {
            run_id: state.run_id.clone(),
            design_id: state.design_id().to_string(),
            phase: state.phase,
            open_ticket_count: state.open_tickets().count(),
            latest_seq: state.last_seq,
            coverage_pct: state.coverage.as_ref().map(|c| c.consolidated_pct),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid request")]
    Invalid(Vec<ValidationError>),
    #[error("{0}")]
    BadRequest(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("unknown ticket `{0}`")]
    UnknownTicket(String),
    #[error("run `{0}` has finished")]
    Finished(String),
    #[error(transparent)]
    Hitl(HitlError),
    #[error(transparent)]
    Exec(ExecError),
    #[error("{0}")]
    Io(String),
}

impl From<ExecError> for StoreError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Hitl(h) => StoreError::Hitl(h),
            other => StoreError::Exec(other),
        }
    }
}

/// Where a run's records come from.
#[derive(Clone)]
pub enum RunSource {
    Live(RunHandle),
    Archived(Arc<Archived>),
}

pub struct Archived {
    pub records: Vec<EventRecord>,
    pub state: RunState,
}

impl RunSource {
    pub fn state(&self) -> RunState {
        match self {
            RunSource::Live(h) => h.state(),
            RunSource::Archived(a) => a.state.clone(),
        }
    }

    pub fn records_from(&self, from: u64) -> Vec<EventRecord> {
        match self {
            RunSource::Live(h) => h.records_from(from),
            RunSource::Archived(a) => a
                .records
                .iter()
                .skip(from.saturating_sub(1) as usize)
                .cloned()
                .collect(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        match self {
            RunSource::Live(h) => h.is_terminal(),
            RunSource::Archived(_) => true,
        }
    }
}

pub struct RunStore {
    data_dir: PathBuf,
    registry: BackendRegistry,
    adapters: Option<AdapterConfig>,
    runs: RwLock<BTreeMap<RunId, RunSource>>,
}

fn io(e: impl std::fmt::Display) -> StoreError {
    StoreError::Io(e.to_string())
}

impl RunStore {
    /// Opens the store and loads every finished run found under the data dir.
    pub fn open(
        data_dir: impl Into<PathBuf>,
        registry: BackendRegistry,
        adapters: Option<AdapterConfig>,
    ) -> Result<Self, StoreError> {
        let data_dir = data_dir.into();
        let runs_dir = data_dir.join("runs");
        fs::create_dir_all(&runs_dir).map_err(io)?;
        let mut runs = BTreeMap::new();
        for entry in fs::read_dir(&runs_dir).map_err(io)? {
            let path = entry.map_err(io)?.path().join("events.jsonl");
            if !path.is_file() {
                continue;
            }
            match load_archived(&path) {
                Ok(a) => {
                    runs.insert(a.state.run_id.clone(), RunSource::Archived(Arc::new(a)));
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable run log"),
            }
        }
        Ok(Self {
            data_dir,
            registry,
            adapters,
            runs: RwLock::new(runs),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, BTreeMap<RunId, RunSource>> {
        self.runs.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn source(&self, run_id: &str) -> Result<RunSource, StoreError> {
        self.read()
            .get(&RunId::new(run_id))
            .cloned()
            .ok_or_else(|| StoreError::UnknownRun(run_id.to_string()))
    }

    pub fn summaries(&self) -> Vec<RunSummary> {
        self.read().values().map(|s| RunSummary::of(&s.state())).collect()
    }

    /// Tickets across runs, oldest first within each run.
    pub fn tickets(&self, filter: &TicketFilter) -> Vec<EscalationTicket> {
        let states: Vec<RunState> = self.read().values().map(RunSource::state).collect();
        list_pending(states.iter().flat_map(|s| &s.tickets), filter)
    }

    /// Validates and starts a run on its own thread.
    pub fn create_run(&self, req: CreateRunRequest) -> Result<RunSummary, StoreError> {
        let mut config = req.config;
        let mut errors = config.validate().err().map(|e| e.0).unwrap_or_default();
        let spec = match validate_specification(&req.spec) {
            Ok(spec) => Some(spec),
            Err(e) => {
                errors.extend(e.0);
                None
            }
        };
        if !errors.is_empty() {
            return Err(StoreError::Invalid(errors));
        }
        let spec = spec.expect("validated");
        if spec.design_id != config.design_id {
            return Err(StoreError::BadRequest(format!(
                "config is for `{}` but the design document names `{}`",
                config.design_id, spec.design_id
            )));
        }
        let desc = self.registry.get(&config.backend_id).map_err(|e| match e {
            LlmError::UnknownBackend(id) => StoreError::UnknownBackend(id.to_string()),
            other => StoreError::BadRequest(other.to_string()),
        })?;

        let scenario_path = req.scenario.or_else(|| config.scenario_path.clone());
        let scenario: Option<Arc<Scenario>> = match &scenario_path {
            Some(path) => {
                let text =
                    fs::read_to_string(path).map_err(|e| StoreError::BadRequest(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                let s = parse_scenario(&text, base).map_err(|e| StoreError::BadRequest(e.to_string()))?;
                Some(Arc::new(s))
            }
            None => None,
        };
        config.scenario_path = scenario_path;
        if desc.kind == BackendKind::ScriptedMock && scenario.is_none() {
            return Err(StoreError::BadRequest(format!(
                "backend `{}` needs a scenario",
                desc.backend_id
            )));
        }
        if req.hitl == HitlMode::Scripted && scenario.is_none() {
            return Err(StoreError::BadRequest("scripted HITL needs a scenario".into()));
        }

        let run_id = RunId::new(format!(
            "{}-{}",
            config.design_id,
            &uuid::Uuid::new_v4().simple().to_string()[..12]
        ));
        let dir = self.data_dir.join("runs").join(run_id.as_str());
        fs::create_dir_all(&dir).map_err(io)?;

        let backend = self
            .registry
            .instantiate(&config.backend_id, scenario.as_ref().map(|s| s.scripts()))
            .map_err(|e| StoreError::BadRequest(e.to_string()))?;
        let tools = match (&scenario, &self.adapters) {
            (Some(s), _) => Toolchain::fake(&s.schedule),
            (None, Some(adapters)) => {
                Toolchain::subprocess(adapters, &dir.join("work")).map_err(|e| StoreError::BadRequest(e.to_string()))?
            }
            (None, None) => {
                return Err(StoreError::BadRequest(
                    "no scenario and no tool adapters configured".into(),
                ))
            }
        };
        let reviewer: Box<dyn Reviewer> = match (req.hitl, &scenario) {
            (HitlMode::Scripted, Some(s)) => Box::new(ScriptedResolver::new(
                s.clone(),
                tapeloop_core::llm::TemperatureBucket::of(config.temperature),
            )),
            _ => Box::new(ExternalReviewer),
        };
        let placeholder_markers = match &scenario {
            Some(s) if !s.placeholder_markers.is_empty() => s.placeholder_markers.clone(),
            _ => DEFAULT_PLACEHOLDER_MARKERS.iter().map(|m| m.to_string()).collect(),
        };
        let log = EventLog::create(dir.join("events.jsonl")).map_err(io)?;
        let setup = RunSetup {
            run_id: run_id.clone(),
            config,
            spec,
            placeholder_markers,
            log,
            hash_states: true,
        };
        let (executor, handle) = Executor::start(setup, backend, tools, reviewer)?;
        let summary = RunSummary::of(&handle.state());
        self.runs
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(run_id.clone(), RunSource::Live(handle.clone()));
        thread::Builder::new()
            .name(format!("run-{run_id}"))
            .spawn(move || {
                let outcome = executor.run();
                tracing::info!(run = %run_id, phase = %outcome.phase, "run finished");
                if let Some(report) = handle.state().signoff {
                    if let Ok(json) = serde_json::to_string_pretty(&report) {
                        if let Err(e) = fs::write(dir.join("signoff.json"), json + "\n") {
                            tracing::warn!(error = %e, "could not write signoff.json");
                        }
                    }
                }
            })
            .map_err(io)?;
        Ok(summary)
    }

    fn live_owner(&self, ticket_id: &TicketId) -> Result<RunHandle, StoreError> {
        for source in self.read().values() {
            let state = source.state();
            if state.ticket(ticket_id).is_none() {
                continue;
            }
            return match source {
                RunSource::Live(h) => Ok(h.clone()),
                RunSource::Archived(_) => Err(StoreError::Hitl(HitlError::TicketClosed(ticket_id.clone()))),
            };
        }
        Err(StoreError::UnknownTicket(ticket_id.to_string()))
    }

    pub fn resolve(&self, ticket_id: &str, body: &ResolutionBody) -> Result<(RunId, Resolution), StoreError> {
        let ticket_id = TicketId::new(ticket_id);
        let handle = self.live_owner(&ticket_id)?;
        let resolution = handle.submit_resolution(&ticket_id, body)?;
        Ok((handle.run_id().clone(), resolution))
    }

    pub fn abort(&self, run_id: &str, reason: &str) -> Result<RunSummary, StoreError> {
        match self.source(run_id)? {
            RunSource::Live(h) => {
                if h.is_terminal() {
                    return Err(StoreError::Finished(run_id.to_string()));
                }
                h.abort(reason)?;
                Ok(RunSummary::of(&h.state()))
            }
            RunSource::Archived(_) => Err(StoreError::Finished(run_id.to_string())),
        }
    }
}

/// Reads a run log and replays it, checking every recorded state hash.
pub fn load_archived(path: &Path) -> Result<Archived, StoreError> {
    let records = read_log(path).map_err(io)?;
    let state = replay_log(&records).map_err(io)?;
    Ok(Archived { records, state })
}
