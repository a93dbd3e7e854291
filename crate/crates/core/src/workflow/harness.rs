//! Local runs against a scenario: the scripted mock backend, the fake
//! toolchain and a reviewer that answers tickets from the scenario's HITL
//! scripts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::executor::{ExecError, Executor, Reviewer, ReviewerAnswer, RunOutcome, RunSetup};
use super::state::RunState;
use crate::bus::{EventLog, EventRecord};
use crate::hitl::{EscalationTicket, ResolutionBody, ResolutionKind, Trigger};
use crate::llm::{LlmError, ScriptedMock, TemperatureBucket};
use crate::model::{Digest, Phase, RunConfig, RunId};
use crate::tooling::{Scenario, ToolError, Toolchain};

/// Answers tickets from a scenario's HITL scripts and records the ones it
/// had no answer for.
pub struct ScriptedResolver {
    scenario: Arc<Scenario>,
    bucket: TemperatureBucket,
    misses: Arc<Mutex<Vec<String>>>,
}

impl ScriptedResolver {
    pub fn new(scenario: Arc<Scenario>, bucket: TemperatureBucket) -> Self {
        Self {
            scenario,
            bucket,
            misses: Arc::default(),
        }
    }

    /// Shared view of the unanswered tickets, as `hitl:<trigger>:<source>#<n>`.
    pub fn misses(&self) -> Arc<Mutex<Vec<String>>> {
        self.misses.clone()
    }
}

fn module_of(ticket: &EscalationTicket, payload: &serde_json::Value) -> String {
    if let Some(m) = payload.get("module").and_then(|m| m.as_str()) {
        return m.to_string();
    }
    ["check:", "block:"]
        .iter()
        .find_map(|p| ticket.source.strip_prefix(p))
        .unwrap_or_default()
        .to_string()
}

impl Reviewer for ScriptedResolver {
    fn review(&mut self, state: &RunState, ticket: &EscalationTicket) -> ReviewerAnswer {
        if ticket.trigger == Trigger::StepBudget {
            return ReviewerAnswer::Abort("step budget exhausted".into());
        }
        let occurrence = state
            .tickets
            .iter()
            .filter(|t| t.trigger == ticket.trigger && t.source == ticket.source)
            .count() as u32;
        let Some(script) = self
            .scenario
            .hitl_for(ticket.trigger, &ticket.source, self.bucket, occurrence)
        else {
            let miss = format!("hitl:{}:{}#{occurrence}", ticket.trigger, ticket.source);
            self.misses.lock().unwrap_or_else(|e| e.into_inner()).push(miss.clone());
            return ReviewerAnswer::Abort(format!("no scripted answer for {miss}"));
        };
        let Some(replacement) = script.replacement() else {
            return ReviewerAnswer::Resolve(script.resolution.clone());
        };
        let module = module_of(ticket, &script.resolution.payload);
        let Some(current) = state.artifacts.get(&module) else {
            return ReviewerAnswer::Abort(format!("scripted patch names unknown module `{module}`"));
        };
        let diff = diffy::create_patch(&current.source_text, replacement).to_string();
        ReviewerAnswer::Resolve(ResolutionBody {
            kind: ResolutionKind::PatchRtl,
            payload: serde_json::json!({
                "module": module,
                "base_revision": current.revision,
                "diff": diff,
            }),
            effort_minutes: script.resolution.effort_minutes,
            reviewer_id: script.resolution.reviewer_id.clone(),
        })
    }
}

/// A finished local run.
#[derive(Debug)]
pub struct LocalRun {
    pub run_id: RunId,
    pub outcome: RunOutcome,
    pub state: RunState,
    pub records: Vec<EventRecord>,
    pub final_hash: Option<Digest>,
    /// Tickets the scenario had no script for.
    pub hitl_misses: Vec<String>,
    /// `runs/<id>` under the data dir, when one was given.
    pub dir: Option<PathBuf>,
}

impl LocalRun {
    pub fn signed_off(&self) -> bool {
        self.outcome.phase == Phase::SignedOff
    }
}

fn io_err(e: std::io::Error) -> ExecError {
    ExecError::Setup(e.to_string())
}

fn execute(
    scenario: &Arc<Scenario>,
    config: RunConfig,
    run_id: RunId,
    log: EventLog,
    hash_states: bool,
) -> Result<LocalRun, ExecError> {
    let bucket = TemperatureBucket::of(config.temperature);
    let resolver = ScriptedResolver::new(scenario.clone(), bucket);
    let misses = resolver.misses();
    let setup = RunSetup {
        run_id: run_id.clone(),
        config,
        spec: scenario.spec().clone(),
        placeholder_markers: scenario.placeholder_markers.clone(),
        log,
        hash_states,
    };
    let (executor, handle) = Executor::start(
        setup,
        Box::new(ScriptedMock::new(scenario.scripts().to_vec())),
        Toolchain::fake(&scenario.schedule),
        Box::new(resolver),
    )?;
    let outcome = executor.run();
    let hitl_misses = misses.lock().unwrap_or_else(|e| e.into_inner()).clone();
    Ok(LocalRun {
        run_id,
        outcome,
        state: handle.state(),
        records: handle.records(),
        final_hash: handle.final_hash(),
        hitl_misses,
        dir: None,
    })
}

/// Runs a scenario to completion. With a data dir the log goes to
/// `runs/<id>/events.jsonl` and a signed-off run also writes
/// `runs/<id>/signoff.json`.
pub fn run_local(
    scenario: &Scenario,
    config: RunConfig,
    run_id: RunId,
    data_dir: Option<&Path>,
) -> Result<LocalRun, ExecError> {
    let scenario = Arc::new(scenario.clone());
    let dir = data_dir.map(|d| d.join("runs").join(run_id.as_str()));
    let log = match &dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err)?;
            EventLog::create(dir.join("events.jsonl")).map_err(io_err)?
        }
        None => EventLog::in_memory(),
    };
    let mut run = execute(&scenario, config, run_id, log, true)?;
    if let Some(dir) = &dir {
        if let Some(report) = &run.state.signoff {
            let json = serde_json::to_string_pretty(report).map_err(|e| ExecError::Setup(e.to_string()))?;
            fs::write(dir.join("signoff.json"), json + "\n").map_err(io_err)?;
        }
    }
    run.dir = dir;
    Ok(run)
}

/// Dry-runs the scenario at each of its temperatures and lists everything
/// it failed to cover: mock script keys, tool schedule gaps, unanswered
/// tickets, and runs that did not sign off.
pub fn check_totality(scenario: &Scenario) -> Vec<String> {
    let scenario = Arc::new(scenario.clone());
    let mut problems = Vec::new();
    for &t in &scenario.temperatures {
        let config = RunConfig::new(scenario.design_id.clone(), "mock", t);
        let run_id = RunId::new(format!("dry-{}-{t}", scenario.design_id));
        let run = match execute(&scenario, config, run_id, EventLog::in_memory(), false) {
            Ok(run) => run,
            Err(e) => {
                problems.push(format!("t={t}: {e}"));
                continue;
            }
        };
        problems.extend(run.hitl_misses.iter().map(|m| format!("t={t}: {m}")));
        match &run.outcome.error {
            Some(ExecError::Llm(LlmError::ScriptMiss(key))) => problems.push(format!("t={t}: script:{key}")),
            Some(ExecError::Tool(ToolError::ScheduleMiss(what))) => problems.push(format!("t={t}: schedule:{what}")),
            Some(e) if run.hitl_misses.is_empty() => problems.push(format!("t={t}: {e}")),
            _ => {}
        }
        if run.outcome.error.is_none() && !run.signed_off() {
            problems.push(format!("t={t}: ended in {}", run.outcome.phase));
        }
    }
    problems
}
