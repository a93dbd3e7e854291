//! The run executor: the single writer of a run's event log.
//!
//! Every state change goes through [`Shared::emit`], which applies the
//! event to the run state, hashes the result and appends the record. Readers
//! (the gateway, tests) hold a [`RunHandle`] and may submit resolutions or
//! abort while the executor thread is blocked on a ticket.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use serde::Serialize;

use super::definition::WorkflowDefinition;
use super::dispatch_tasks;
use super::events::RunEvent;
use super::signoff::sign_off;
use super::state::{IllegalTransition, RunState};
use crate::agents::{
    parse_critique, parse_microarchitecture, parse_rtl, parse_sva, parse_vplan, reviewers, role_of, roster,
    run_deliberation, scan_placeholders, CritiqueResult, DeliberationTask, Issue, IssueKind, ParsedProperty, RoleId,
    Session,
};
use crate::bus::{
    select_next_speaker, AgentMessage, BusError, Delivery, EventLog, EventRecord, LlmTrace, LogError, MessageBus,
    MessagePayload, SpeakerPolicy, Topic, TopicKind,
};
use crate::hitl::{self, EscalationTicket, HitlError, Resolution, ResolutionBody, ResolutionKind, Trigger};
use crate::llm::{
    placeholders, render_prompt, CompletionBackend, CompletionRequest, ContextKey, LlmError, PromptContext,
    TemperatureBucket, TEMPLATE_IDS,
};
use crate::model::{
    canonical_hash, AgentId, ArtifactProvenance, DesignSpecification, Digest, LintCategory, Phase, PropertyId,
    PropertyProvenance, PropertyStatus, RtlArtifact, RunConfig, RunId, Stream, SvaProperty, TicketId, VPlanEntry,
};
use crate::tooling::{
    analyze_cex, run_coverage, run_formal, run_lint, FormalVerdict, Invocation, PropertyInput, ToolError, ToolKind,
    Toolchain,
};

/// Steps kept free for the budget escalation itself.
const BUDGET_RESERVE: u64 = 8;
/// Retries of a failing tool or transport before the run gives up.
const MAX_RETRIES: u32 = 3;
/// Hard cap on tickets per run, so a reviewer that never fixes anything
/// cannot keep a run alive forever.
const MAX_TICKETS: usize = 64;
const NONE: &str = "(none)";

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("step budget exhausted")]
    Budget,
    #[error("run aborted: {0}")]
    Aborted(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Illegal(#[from] IllegalTransition),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Hitl(#[from] HitlError),
    #[error("{0}")]
    Setup(String),
}

/// What a reviewer does with an open ticket.
#[derive(Debug, Clone, PartialEq)]
pub enum ReviewerAnswer {
    Resolve(ResolutionBody),
    /// Nothing yet; a resolution will arrive through the [`RunHandle`].
    Wait,
    Abort(String),
}

/// The human side of escalations.
pub trait Reviewer: Send {
    fn review(&mut self, state: &RunState, ticket: &EscalationTicket) -> ReviewerAnswer;
}

/// Reviewer for served runs: resolutions come in over HTTP.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExternalReviewer;

impl Reviewer for ExternalReviewer {
    fn review(&mut self, _: &RunState, _: &EscalationTicket) -> ReviewerAnswer {
        ReviewerAnswer::Wait
    }
}

struct Core {
    state: RunState,
    log: EventLog,
    bus: MessageBus,
}

struct Shared {
    run_id: RunId,
    core: Mutex<Core>,
    cond: Condvar,
    hash_states: bool,
}

fn is_hitl_event(event: &RunEvent) -> bool {
    matches!(
        event,
        RunEvent::TicketOpened { .. }
            | RunEvent::ResolutionSubmitted { .. }
            | RunEvent::ResolutionApplied { .. }
            | RunEvent::Aborted { .. }
            | RunEvent::DeadLetter { .. }
    )
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Core> {
        self.core.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn emit(&self, core: &mut Core, event: RunEvent) -> Result<u64, ExecError> {
        if core.state.phase == Phase::Aborted {
            return Err(ExecError::Aborted(core.state.abort_reason.clone().unwrap_or_default()));
        }
        if let Some(config) = &core.state.config {
            if !is_hitl_event(&event) && core.state.step_count + BUDGET_RESERVE >= config.step_budget {
                return Err(ExecError::Budget);
            }
        }
        core.state.apply(&event)?;
        let state_hash_after = if self.hash_states {
            canonical_hash(&core.state)
        } else {
            Digest::zero()
        };
        let (sender, topic) = event.origin(&self.run_id);
        let record = EventRecord {
            seq: core.state.last_seq,
            granularity: event.granularity(),
            sender,
            topic,
            payload: event,
            state_hash_after,
        };
        tracing::debug!(seq = record.seq, event = record.payload.name(), "event");
        let seq = core.log.append(record)?;
        self.cond.notify_all();
        Ok(seq)
    }
}

/// Read and control access to a run, shareable across threads.
#[derive(Clone)]
pub struct RunHandle {
    shared: Arc<Shared>,
}

impl RunHandle {
    pub fn run_id(&self) -> &RunId {
        &self.shared.run_id
    }

    pub fn state(&self) -> RunState {
        self.shared.lock().state.clone()
    }

    pub fn phase(&self) -> Phase {
        self.shared.lock().state.phase
    }

    pub fn is_terminal(&self) -> bool {
        self.phase().is_terminal()
    }

    pub fn last_seq(&self) -> u64 {
        self.shared.lock().state.last_seq
    }

    /// Records with `seq >= from`.
    pub fn records_from(&self, from: u64) -> Vec<EventRecord> {
        let core = self.shared.lock();
        let skip = from.saturating_sub(1) as usize;
        core.log.records().iter().skip(skip).cloned().collect()
    }

    pub fn records(&self) -> Vec<EventRecord> {
        self.records_from(1)
    }

    /// Hash recorded with the last event.
    pub fn final_hash(&self) -> Option<Digest> {
        self.shared
            .lock()
            .log
            .records()
            .last()
            .map(|r| r.state_hash_after.clone())
    }

    /// Blocks until an event past `after_seq` exists, the run terminates, or
    /// `timeout` passes. Returns the last seq.
    pub fn wait_for(&self, after_seq: u64, timeout: Duration) -> u64 {
        let core = self.shared.lock();
        let (core, _) = self
            .shared
            .cond
            .wait_timeout_while(core, timeout, |c| {
                c.state.last_seq <= after_seq && !c.state.phase.is_terminal()
            })
            .unwrap_or_else(|e| e.into_inner());
        core.state.last_seq
    }

    /// Validates and records a resolution; the executor applies it.
    pub fn submit_resolution(&self, ticket_id: &TicketId, body: &ResolutionBody) -> Result<Resolution, ExecError> {
        let mut core = self.shared.lock();
        let resolution = hitl::submit_resolution(&core.state, ticket_id, body)?;
        self.shared.emit(
            &mut core,
            RunEvent::ResolutionSubmitted {
                ticket_id: ticket_id.clone(),
                resolution: resolution.clone(),
            },
        )?;
        Ok(resolution)
    }

    pub fn abort(&self, reason: &str) -> Result<(), ExecError> {
        let mut core = self.shared.lock();
        if core.state.phase.is_terminal() {
            return Err(ExecError::Illegal(IllegalTransition {
                phase: core.state.phase,
                event: "aborted",
                reason: "run is terminated".into(),
            }));
        }
        self.shared.emit(
            &mut core,
            RunEvent::Aborted {
                reason: reason.to_string(),
            },
        )?;
        Ok(())
    }
}

/// Everything a run starts from, apart from its collaborators.
pub struct RunSetup {
    pub run_id: RunId,
    pub config: RunConfig,
    pub spec: DesignSpecification,
    pub placeholder_markers: Vec<String>,
    pub log: EventLog,
    /// Off for dry runs, which skip per-event state hashing.
    pub hash_states: bool,
}

/// How a run ended.
#[derive(Debug)]
pub struct RunOutcome {
    pub phase: Phase,
    pub error: Option<ExecError>,
}

pub struct Executor {
    shared: Arc<Shared>,
    backend: Box<dyn CompletionBackend>,
    tools: Toolchain,
    reviewer: Box<dyn Reviewer>,
    bucket: TemperatureBucket,
    policy: SpeakerPolicy,
    stream: Stream,
    lint_digests: BTreeMap<(String, u32), Digest>,
}

fn ctx(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn kebab<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn render_issues(critiques: &[CritiqueResult], parse_error: Option<&str>) -> String {
    let mut lines: Vec<String> = critiques
        .iter()
        .flat_map(|c| &c.issues)
        .map(|i| match &i.location {
            Some(loc) => format!("- {}: {} ({loc})", kebab(&i.kind), i.detail),
            None => format!("- {}: {}", kebab(&i.kind), i.detail),
        })
        .collect();
    if let Some(e) = parse_error {
        lines.push(format!("- syntax-error: {e}"));
    }
    if lines.is_empty() {
        NONE.to_string()
    } else {
        lines.join("\n")
    }
}

fn normalize(body: &str) -> String {
    body.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Every placeholder any template uses, defaulted, plus the design document sections.
fn base_context(state: &RunState) -> PromptContext {
    let mut out: PromptContext = TEMPLATE_IDS
        .iter()
        .flat_map(|t| placeholders(t))
        .map(|p| (p, NONE.to_string()))
        .collect();
    if let Some(spec) = &state.spec {
        out.insert("design_id".into(), spec.design_id.clone());
        out.insert("requirements".into(), spec.requirements_text());
        out.insert("interfaces".into(), spec.interfaces_text());
        out.insert("performance".into(), spec.performance_text());
        out.insert("fsm_details".into(), spec.fsm_text());
    }
    out.insert("coverage_target".into(), format!("{}", state.coverage_target()));
    out
}

fn code_executor() -> AgentId {
    RoleId::CodeExecutor.agent()
}

impl Executor {
    /// Records `run-created` and returns the executor with a handle to it.
    pub fn start(
        setup: RunSetup,
        backend: Box<dyn CompletionBackend>,
        tools: Toolchain,
        reviewer: Box<dyn Reviewer>,
    ) -> Result<(Executor, RunHandle), ExecError> {
        setup.config.validate().map_err(|e| ExecError::Setup(e.to_string()))?;
        if setup.config.design_id != setup.spec.design_id {
            return Err(ExecError::Setup(format!(
                "config is for `{}`, spec is for `{}`",
                setup.config.design_id, setup.spec.design_id
            )));
        }
        if !setup.log.is_empty() {
            return Err(ExecError::Setup("event log is not empty".into()));
        }
        let run_id = setup.run_id.clone();
        let mut bus = MessageBus::new();
        for kind in [TopicKind::Groupchat, TopicKind::Tool, TopicKind::Hitl] {
            bus.register_topic(Topic::new(kind, &run_id));
        }
        for agent in roster(&setup.config) {
            for kind in &agent.subscriptions {
                bus.subscribe(&Topic::new(*kind, &run_id), agent.agent_id.clone())?;
            }
        }
        let shared = Arc::new(Shared {
            run_id: run_id.clone(),
            core: Mutex::new(Core {
                state: RunState::default(),
                log: setup.log,
                bus,
            }),
            cond: Condvar::new(),
            hash_states: setup.hash_states,
        });
        let bucket = TemperatureBucket::of(setup.config.temperature);
        {
            let mut core = shared.lock();
            let definition_hash = WorkflowDefinition::for_config(&setup.config).hash();
            shared.emit(
                &mut core,
                RunEvent::RunCreated {
                    run_id,
                    config: setup.config,
                    spec: setup.spec,
                    definition_hash,
                    placeholder_markers: setup.placeholder_markers,
                },
            )?;
        }
        let handle = RunHandle { shared: shared.clone() };
        let executor = Executor {
            shared,
            backend,
            tools,
            reviewer,
            bucket,
            policy: SpeakerPolicy::default(),
            stream: Stream::Design,
            lint_digests: BTreeMap::new(),
        };
        Ok((executor, handle))
    }

    pub fn handle(&self) -> RunHandle {
        RunHandle {
            shared: self.shared.clone(),
        }
    }

    /// Drives the run to a terminal phase (or until the step budget ticket
    /// is answered).
    pub fn run(mut self) -> RunOutcome {
        let error = match self.drive() {
            Ok(()) => None,
            Err(ExecError::Budget) => {
                let span = self.span_to_now(1);
                match self.escalate(Trigger::StepBudget, "step-budget", self.stream, span, vec![]) {
                    Ok(_) => Some(ExecError::Budget),
                    Err(e) => Some(e),
                }
            }
            Err(e @ ExecError::Aborted(_)) => Some(e),
            Err(e) => {
                tracing::warn!(error = %e, "run failed");
                let _ = self.emit(RunEvent::Aborted { reason: e.to_string() });
                Some(e)
            }
        };
        RunOutcome {
            phase: self.shared.lock().state.phase,
            error,
        }
    }

    // -- plumbing ------------------------------------------------------------

    fn emit(&self, event: RunEvent) -> Result<u64, ExecError> {
        let mut core = self.shared.lock();
        self.shared.emit(&mut core, event)
    }

    fn read<R>(&self, f: impl FnOnce(&RunState) -> R) -> R {
        f(&self.shared.lock().state)
    }

    fn span_to_now(&self, from: u64) -> (u64, u64) {
        let last = self.read(|s| s.last_seq);
        (from.clamp(1, last), last)
    }

    fn threshold(&self) -> u32 {
        self.read(|s| s.iteration_threshold())
    }

    fn stream_for(&self, source: &str) -> Stream {
        if source == "plan:vplan" || source.starts_with("props:") || source == "cex-repair" || source == "closure" {
            Stream::Verification
        } else if source == "plan:microarchitecture" || source.starts_with("block:") || source.starts_with("check:") {
            Stream::Design
        } else {
            self.stream
        }
    }

    /// Opens a ticket and blocks until its resolution has been applied.
    fn escalate(
        &mut self,
        trigger: Trigger,
        source: &str,
        stream: Stream,
        span: (u64, u64),
        refs: Vec<String>,
    ) -> Result<TicketId, ExecError> {
        let shared = self.shared.clone();
        let mut core = shared.lock();
        if core.state.tickets.len() >= MAX_TICKETS {
            return Err(ExecError::Setup(format!("more than {MAX_TICKETS} escalations")));
        }
        let ticket = hitl::open_ticket(&core.state, trigger, source, stream, span, refs)?;
        let id = ticket.ticket_id.clone();
        tracing::info!(ticket = %id, %trigger, source, "escalation");
        shared.emit(&mut core, RunEvent::TicketOpened { ticket })?;
        loop {
            if core.state.phase == Phase::Aborted {
                return Err(ExecError::Aborted(core.state.abort_reason.clone().unwrap_or_default()));
            }
            if core.state.pending_resolutions.contains_key(&id) {
                shared.emit(&mut core, RunEvent::ResolutionApplied { ticket_id: id.clone() })?;
                if core.state.phase == Phase::Aborted {
                    return Err(ExecError::Aborted(core.state.abort_reason.clone().unwrap_or_default()));
                }
                return Ok(id);
            }
            let ticket = core.state.ticket(&id).cloned().expect("ticket was recorded");
            let body = match self.reviewer.review(&core.state, &ticket) {
                ReviewerAnswer::Wait => {
                    core = shared.cond.wait(core).unwrap_or_else(|e| e.into_inner());
                    continue;
                }
                ReviewerAnswer::Resolve(body) => body,
                ReviewerAnswer::Abort(reason) => ResolutionBody {
                    kind: ResolutionKind::Abort,
                    payload: serde_json::json!({ "reason": reason }),
                    effort_minutes: 0,
                    reviewer_id: "reviewer".into(),
                },
            };
            match hitl::submit_resolution(&core.state, &id, &body) {
                Ok(resolution) => {
                    shared.emit(
                        &mut core,
                        RunEvent::ResolutionSubmitted {
                            ticket_id: id.clone(),
                            resolution,
                        },
                    )?;
                }
                Err(e) => {
                    let reason = format!("resolution for {id} rejected: {e}");
                    shared.emit(&mut core, RunEvent::Aborted { reason: reason.clone() })?;
                    return Err(ExecError::Aborted(reason));
                }
            }
        }
    }

    /// Posts a chat message from `sender`, who must hold the turn.
    fn say(&mut self, sender: &AgentId, payload: MessagePayload, llm: Option<LlmTrace>) -> Result<u64, ExecError> {
        let shared = self.shared.clone();
        let mut core = shared.lock();
        let expected = select_next_speaker(core.log.records(), core.state.phase, &self.policy)?;
        if &expected != sender {
            return Err(BusError::NotYourTurn(sender.clone()).into());
        }
        let msg = AgentMessage {
            seq: core.state.last_seq + 1,
            sender: sender.clone(),
            topic: Topic::groupchat(&shared.run_id),
            payload,
            in_reply_to: None,
            llm,
        };
        core.bus.grant_turn(sender.clone());
        let delivery = core.bus.route_message(&msg);
        core.bus.release_turn();
        match delivery? {
            Delivery::Delivered(_) => shared.emit(&mut core, RunEvent::Chat(msg)),
            Delivery::DeadLetter => shared.emit(&mut core, RunEvent::DeadLetter { message: msg }),
        }
    }

    /// One backend call for `agent` on `task`, retried through a ticket on
    /// transport failures.
    fn ask(
        &mut self,
        agent: &AgentId,
        task: &str,
        extra: &[(String, String)],
    ) -> Result<(String, LlmTrace), ExecError> {
        let role = role_of(agent).ok_or_else(|| ExecError::Setup(format!("no role for `{agent}`")))?;
        let template = role
            .template_id()
            .ok_or_else(|| ExecError::Setup(format!("`{agent}` has no prompt template")))?;
        let mut failures = 0;
        loop {
            let req = self.read(|st| -> Result<CompletionRequest, ExecError> {
                let mut pc = base_context(st);
                pc.insert("task".into(), task.to_string());
                for (k, v) in extra {
                    pc.insert(k.clone(), v.clone());
                }
                let config = st.config.as_ref().expect("run created");
                Ok(CompletionRequest {
                    role_id: role,
                    prompt: render_prompt(template, &pc)?,
                    temperature: config.temperature,
                    seed: config.random_seed,
                    context: ContextKey {
                        design_id: st.design_id().to_string(),
                        phase: st.phase,
                        task_id: task.to_string(),
                        iteration: st.llm_iteration(agent, task) + 1,
                    },
                })
            })?;
            match self.backend.complete(&req) {
                Ok(c) => {
                    return Ok((
                        c.text,
                        LlmTrace {
                            context: req.context,
                            usage: c.usage,
                        },
                    ))
                }
                Err(LlmError::TransportFailure(detail)) if failures < MAX_RETRIES => {
                    failures += 1;
                    let span = self.span_to_now(u64::MAX);
                    self.escalate(
                        Trigger::ToolFailure,
                        &format!("llm:{agent}"),
                        self.stream,
                        span,
                        vec![detail],
                    )?;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Asks and posts the answer as the agent's turn.
    fn propose_text(&mut self, agent: &AgentId, task: &str, extra: &[(String, String)]) -> Result<String, ExecError> {
        let (text, trace) = self.ask(agent, task, extra)?;
        self.say(agent, MessagePayload::Text { text: text.clone() }, Some(trace))?;
        Ok(text)
    }

    /// Rule-based issues plus the reviewer's own critique, posted as its turn.
    fn critic_review(
        &mut self,
        reviewer: &AgentId,
        task: &str,
        payload: String,
        mut issues: Vec<Issue>,
    ) -> Result<CritiqueResult, ExecError> {
        let (text, trace) = self.ask(reviewer, task, &ctx(&[("payload", payload)]))?;
        match parse_critique(&text) {
            Some(more) => issues.extend(more),
            None => issues.push(Issue::new(IssueKind::SyntaxError, "critique did not parse", None)),
        }
        let critique = CritiqueResult::from_issues(issues);
        self.say(reviewer, MessagePayload::Critique(critique.clone()), Some(trace))?;
        Ok(critique)
    }

    /// Calls a tool, turning recoverable failures into tickets.
    fn tool<R>(
        &mut self,
        kind: ToolKind,
        mut call: impl FnMut(&Toolchain) -> Result<R, ToolError>,
    ) -> Result<R, ExecError> {
        let mut failures = 0;
        loop {
            match call(&self.tools) {
                Ok(r) => return Ok(r),
                Err(e @ (ToolError::ScheduleMiss(_) | ToolError::EmptyPropertySet | ToolError::BadDescriptor(_))) => {
                    return Err(e.into())
                }
                Err(e) if failures < MAX_RETRIES => {
                    failures += 1;
                    self.emit(RunEvent::ToolFailure {
                        kind,
                        error: e.to_string(),
                    })?;
                    let span = self.span_to_now(u64::MAX);
                    self.escalate(
                        Trigger::ToolFailure,
                        &format!("tool:{kind}"),
                        self.stream,
                        span,
                        vec![e.to_string()],
                    )?;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn invocation(
        &self,
        kind: ToolKind,
        artifacts: Vec<RtlArtifact>,
        with_properties: Option<PropertyStatus>,
    ) -> Invocation {
        self.read(|st| Invocation {
            kind,
            design_id: st.design_id().to_string(),
            bucket: self.bucket,
            index: st.invocations(kind) + 1,
            artifacts,
            properties: st
                .properties
                .iter()
                .filter(|p| with_properties.is_none_or(|s| p.status == s))
                .map(|p| PropertyInput {
                    property: p.clone(),
                    revision: st.property_revision(&p.property_id),
                })
                .collect(),
        })
    }

    fn all_artifacts(&self) -> Vec<RtlArtifact> {
        self.read(|st| st.modules.iter().filter_map(|m| st.artifacts.get(m).cloned()).collect())
    }

    fn open(&mut self, participants: &[AgentId]) -> Result<(), ExecError> {
        self.emit(RunEvent::FloorOpened {
            participants: participants.to_vec(),
        })?;
        Ok(())
    }

    fn close(&mut self) -> Result<(), ExecError> {
        self.emit(RunEvent::FloorClosed)?;
        Ok(())
    }

    // -- tools ---------------------------------------------------------------

    /// Lints and reference-checks the module's current revision unless that
    /// was already done. Returns the lint report digest and a summary.
    fn lint_module(&mut self, module: &str) -> Result<(Digest, String), ExecError> {
        let artifact = self
            .read(|st| st.artifacts.get(module).cloned())
            .ok_or_else(|| ExecError::Setup(format!("no RTL for `{module}`")))?;
        let key = (module.to_string(), artifact.revision);
        let linted = self.read(|st| st.current_lint(module).is_some());
        if !linted || !self.lint_digests.contains_key(&key) {
            let inv = self.invocation(ToolKind::Lint, vec![artifact.clone()], Some(PropertyStatus::Waived));
            let inv = Invocation {
                properties: Vec::new(),
                ..inv
            };
            let outcome = self.tool(ToolKind::Lint, |t| run_lint(&*t.lint, &inv))?;
            self.emit(RunEvent::LintReported {
                module: module.to_string(),
                revision: artifact.revision,
                findings: outcome.findings,
                digest: outcome.digest.clone(),
            })?;
            self.lint_digests.insert(key.clone(), outcome.digest);
        }
        if self.read(|st| st.current_reference(module).is_none()) {
            let bucket = self.bucket;
            let pass = self.tool(ToolKind::Lint, |t| t.reference.check(&artifact, bucket))?;
            self.emit(RunEvent::ReferenceChecked {
                module: module.to_string(),
                revision: artifact.revision,
                pass,
            })?;
        }
        let summary = self.read(|st| {
            let lint = st.current_lint(module).expect("just linted");
            let warnings = lint.findings.len() - lint.blocking();
            let reference = match st.current_reference(module).and_then(|r| r.pass) {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "n/a",
            };
            format!(
                "{module} r{}: {} fatal/error, {warnings} warning(s), reference {reference}",
                artifact.revision,
                lint.blocking()
            )
        });
        Ok((self.lint_digests[&key].clone(), summary))
    }

    /// Formal on every unchecked property; `None` when there was nothing to check.
    fn formal_unchecked(&mut self) -> Result<Option<(Digest, String)>, ExecError> {
        let inv = self.invocation(ToolKind::Formal, self.all_artifacts(), Some(PropertyStatus::Unchecked));
        if inv.properties.is_empty() {
            return Ok(None);
        }
        let (result, digest) = self.tool(ToolKind::Formal, |t| run_formal(&*t.formal, &inv))?;
        let count = |f: fn(&FormalVerdict) -> bool| result.verdicts.iter().filter(|v| f(&v.verdict)).count();
        let summary = format!(
            "{} proven, {} cex, {} tool error(s)",
            count(|v| matches!(v, FormalVerdict::Proven)),
            count(|v| matches!(v, FormalVerdict::Cex(_))),
            count(|v| matches!(v, FormalVerdict::ToolError { .. }))
        );
        self.emit(RunEvent::FormalReported {
            result,
            digest: digest.clone(),
        })?;
        Ok(Some((digest, summary)))
    }

    fn coverage(&mut self) -> Result<(Digest, String), ExecError> {
        let inv = self.invocation(ToolKind::Coverage, self.all_artifacts(), None);
        let (snapshot, digest) = self.tool(ToolKind::Coverage, |t| run_coverage(&*t.coverage, &inv))?;
        let summary = format!(
            "consolidated {:.2}% (code {:.2}, assertion {:.2}, functional {:.2}), {} uncovered",
            snapshot.consolidated_pct,
            snapshot.code_pct,
            snapshot.assertion_pct,
            snapshot.functional_pct,
            snapshot.uncovered.len()
        );
        self.emit(RunEvent::CoverageReported {
            snapshot,
            digest: digest.clone(),
        })?;
        Ok((digest, summary))
    }

    fn report(&mut self, kind: ToolKind, digest: Digest, summary: String) -> Result<(), ExecError> {
        self.say(
            &code_executor(),
            MessagePayload::ToolReport { kind, digest, summary },
            None,
        )?;
        Ok(())
    }

    /// Formal on the unchecked set, then coverage, on a code-executor floor.
    fn tool_round(&mut self, with_coverage: bool) -> Result<(), ExecError> {
        self.open(&[code_executor()])?;
        if let Some((digest, summary)) = self.formal_unchecked()? {
            self.report(ToolKind::Formal, digest, summary)?;
        }
        if with_coverage {
            let (digest, summary) = self.coverage()?;
            self.report(ToolKind::Coverage, digest, summary)?;
        }
        self.close()
    }

    // -- deliberation helpers ------------------------------------------------

    fn reviewers(&self) -> Vec<AgentId> {
        self.read(|st| reviewers(st.config.as_ref().expect("run created")))
    }

    /// Deliberates until accepted, re-running after every resolved escalation.
    fn deliberate<T: DeliberationTask<Executor>>(
        &mut self,
        task: &mut T,
        proposer: &AgentId,
        reviewers: &[AgentId],
    ) -> Result<T::Payload, ExecError> {
        loop {
            let threshold = self.threshold();
            let out = run_deliberation(self, task, proposer, reviewers, threshold)?;
            self.emit(RunEvent::DeliberationConcluded {
                source: task.source(),
                result: out.result,
                iterations: out.iterations_used,
            })?;
            if out.accepted() {
                return Ok(out.final_payload.expect("accepted deliberations carry a payload"));
            }
        }
    }

    fn check_module(&mut self, module: &str) -> Result<(), ExecError> {
        let mut task = CheckTask {
            module: module.to_string(),
            parse_error: None,
        };
        let mut reviewers = vec![code_executor()];
        reviewers.extend(self.reviewers());
        self.deliberate(&mut task, &RoleId::RtlAgent.agent(), &reviewers)?;
        let revision = self.read(|st| st.artifacts[module].revision);
        self.emit(RunEvent::DesignCheckPassed {
            module: module.to_string(),
            revision,
        })?;
        Ok(())
    }

    // -- phases --------------------------------------------------------------

    fn drive(&mut self) -> Result<(), ExecError> {
        let critics = self.reviewers();

        self.stream = Stream::Design;
        let mut arch_task = PlanTask {
            source: "plan:microarchitecture",
            task: "microarchitecture",
            parse: parse_microarchitecture,
            parse_error: None,
        };
        let arch = self.deliberate(&mut arch_task, &RoleId::DesignLead.agent(), &critics)?;
        self.emit(RunEvent::MicroarchitectureAccepted {
            microarchitecture: arch.clone(),
        })?;

        self.stream = Stream::Verification;
        let mut plan_task = PlanTask {
            source: "plan:vplan",
            task: "vplan",
            parse: parse_vplan,
            parse_error: None,
        };
        let plan = self.deliberate(&mut plan_task, &RoleId::VerificationLead.agent(), &critics)?;
        self.emit(RunEvent::VerificationPlanAccepted { vplan: plan.clone() })?;

        self.emit(RunEvent::PhaseChanged { to: Phase::Development })?;
        let (design, verification) = dispatch_tasks(&arch, &plan).map_err(|e| ExecError::Setup(e.to_string()))?;
        self.emit(RunEvent::TasksDispatched { design, verification })?;

        self.stream = Stream::Design;
        for component in &arch.datapath_components {
            let module = crate::model::module_name_for(&component.name);
            let mut task = BlockTask {
                module: module.clone(),
                role: component.role.clone(),
                parse_error: None,
            };
            let source = self.deliberate(&mut task, &RoleId::RtlAgent.agent(), &critics)?;
            self.emit(RunEvent::ArtifactCommitted {
                artifact: RtlArtifact::first(module, source),
            })?;
        }

        self.stream = Stream::Verification;
        for entry in &plan.entries {
            let mut task = PropsTask {
                entry: entry.clone(),
                parse_error: None,
            };
            let parsed = self.deliberate(&mut task, &RoleId::FormalAgent.agent(), &critics)?;
            let properties = self.new_properties(&parsed);
            self.emit(RunEvent::PropertiesCommitted { properties })?;
        }

        self.emit(RunEvent::PhaseChanged { to: Phase::Execution })?;
        self.design_stream()?;
        self.verification_stream()?;

        let result = self.read(sign_off);
        match result {
            Ok(report) => {
                self.emit(RunEvent::SignedOff { report })?;
                Ok(())
            }
            Err(gate) => {
                let reason = gate.to_string();
                self.emit(RunEvent::Aborted { reason: reason.clone() })?;
                Err(ExecError::Aborted(reason))
            }
        }
    }

    /// Numbers parsed properties `<entry>.<n>` after the ones already issued.
    fn new_properties(&self, parsed: &[ParsedProperty]) -> Vec<SvaProperty> {
        self.read(|st| {
            let mut counters = st.property_counters.clone();
            parsed
                .iter()
                .map(|p| {
                    let n = counters.entry(p.entry_id.clone()).or_insert(0);
                    *n += 1;
                    SvaProperty {
                        property_id: PropertyId::new(format!("{}.{}", p.entry_id, n)),
                        vplan_entry_id: p.entry_id.clone(),
                        body_text: p.body.clone(),
                        status: PropertyStatus::Unchecked,
                        provenance: PropertyProvenance::AgentGenerated,
                    }
                })
                .collect()
        })
    }

    fn design_stream(&mut self) -> Result<(), ExecError> {
        self.stream = Stream::Design;
        let modules = self.read(|st| st.modules.clone());
        self.open(&[code_executor()])?;
        for module in &modules {
            let (digest, summary) = self.lint_module(module)?;
            self.report(ToolKind::Lint, digest, summary)?;
        }
        self.close()?;
        for module in &modules {
            self.check_module(module)?;
        }
        self.emit(RunEvent::StreamCompleted { stream: Stream::Design })?;
        Ok(())
    }

    fn verification_stream(&mut self) -> Result<(), ExecError> {
        self.stream = Stream::Verification;
        let mut tool_error_tickets = 0;
        loop {
            let unchecked = self.read(|st| !st.properties_with(PropertyStatus::Unchecked).is_empty());
            let no_coverage = self.read(|st| st.coverage.is_none());
            if unchecked || no_coverage {
                self.tool_round(true)?;
            }
            let errors: Vec<String> = self.read(|st| {
                st.properties_with(PropertyStatus::ToolError)
                    .iter()
                    .map(|p| p.property_id.to_string())
                    .collect()
            });
            if !errors.is_empty() {
                tool_error_tickets += 1;
                if tool_error_tickets > MAX_RETRIES {
                    return Err(ExecError::Setup(format!(
                        "formal keeps failing on {}",
                        errors.join(", ")
                    )));
                }
                let span = self.span_to_now(u64::MAX);
                self.escalate(Trigger::ToolFailure, "tool:formal", Stream::Verification, span, errors)?;
                continue;
            }
            if self.read(|st| !st.cex.is_empty()) {
                self.cex_repair()?;
                continue;
            }
            let short = self.read(|st| {
                st.coverage
                    .as_ref()
                    .is_some_and(|c| !c.meets(st.coverage_target()) && !c.gap_fully_waived())
            });
            if short {
                self.closure()?;
                continue;
            }
            break;
        }
        self.emit(RunEvent::StreamCompleted {
            stream: Stream::Verification,
        })?;
        Ok(())
    }

    fn cex_ids(&self) -> Vec<PropertyId> {
        self.read(|st| st.cex.keys().cloned().collect())
    }

    /// Repair rounds over every open counterexample. A round that does not
    /// reduce the count is fruitless; `threshold` fruitless rounds in a row
    /// escalate.
    fn cex_repair(&mut self) -> Result<(), ExecError> {
        let threshold = self.threshold();
        let span_start = self.read(|st| st.last_seq + 1);
        let mut round = self.read(|st| st.loop_rounds.get("cex-repair").copied().unwrap_or(0));
        let mut fruitless_run = 0;
        loop {
            let before = self.cex_ids();
            if before.is_empty() {
                return Ok(());
            }
            round += 1;
            for id in &before {
                self.repair_one(id)?;
            }
            self.tool_round(false)?;
            let after = self.cex_ids();
            let fruitless = after.len() >= before.len();
            self.emit(RunEvent::LoopRound {
                name: "cex-repair".into(),
                round,
                fruitless,
            })?;
            fruitless_run = if fruitless { fruitless_run + 1 } else { 0 };
            if fruitless_run >= threshold {
                let span = self.span_to_now(span_start);
                let refs = after.iter().map(ToString::to_string).collect();
                self.escalate(
                    Trigger::DeliberationExhausted,
                    "cex-repair",
                    Stream::Verification,
                    span,
                    refs,
                )?;
                return Ok(());
            }
        }
    }

    fn repair_one(&mut self, id: &PropertyId) -> Result<(), ExecError> {
        let analysis = self.read(|st| st.cex.get(id).map(|c| analyze_cex(c, &st.properties)));
        let Some(Ok(analysis)) = analysis else {
            // Reopened by an RTL fix earlier in this round.
            return Ok(());
        };
        let critic = RoleId::Critic.agent();
        self.open(std::slice::from_ref(&critic))?;
        let critique = self.critic_review(&critic, &format!("cex:{id}"), analysis.prompt_text(), Vec::new())?;
        self.close()?;
        let feedback = render_issues(std::slice::from_ref(&critique), None);
        let task = format!("fix-cex:{id}");

        if critique.kinds().contains(&IssueKind::SpecMismatch) {
            let agent = RoleId::FormalAgent.agent();
            self.open(std::slice::from_ref(&agent))?;
            let text = self.propose_text(
                &agent,
                &task,
                &ctx(&[
                    ("payload", analysis.prompt_text()),
                    ("previous", analysis.body_text.clone()),
                    ("feedback", feedback),
                ]),
            )?;
            self.close()?;
            let entry = self.read(|st| st.property(id).map(|p| p.vplan_entry_id.clone()).unwrap_or_default());
            if let Some(first) = parse_sva(&text, &entry).ok().and_then(|ps| ps.into_iter().next()) {
                if normalize(&first.body) != normalize(&analysis.body_text) {
                    self.emit(RunEvent::PropertyRevised {
                        property_id: id.clone(),
                        body: first.body,
                    })?;
                }
            }
            return Ok(());
        }

        let module = self.read(|st| {
            st.modules
                .iter()
                .find(|m| {
                    st.artifacts.get(*m).is_some_and(|a| {
                        analysis
                            .failing_signals
                            .iter()
                            .any(|s| a.source_text.contains(s.as_str()))
                    })
                })
                .or(st.modules.first())
                .cloned()
        });
        let Some(module) = module else {
            return Ok(());
        };
        let current = self.read(|st| st.artifacts[&module].clone());
        let agent = RoleId::RtlAgent.agent();
        self.open(std::slice::from_ref(&agent))?;
        let text = self.propose_text(
            &agent,
            &task,
            &ctx(&[
                ("module", module.clone()),
                ("payload", analysis.prompt_text()),
                ("previous", current.source_text.clone()),
                ("feedback", feedback),
            ]),
        )?;
        self.close()?;
        let Ok(source) = parse_rtl(&text) else {
            return Ok(());
        };
        if source == current.source_text {
            return Ok(());
        }
        self.emit(RunEvent::ArtifactCommitted {
            artifact: current.revised(source, ArtifactProvenance::AgentGenerated),
        })?;
        self.open(&[code_executor()])?;
        let (digest, summary) = self.lint_module(&module)?;
        self.report(ToolKind::Lint, digest, summary)?;
        self.close()?;
        for reopened in self.cex_ids() {
            self.emit(RunEvent::PropertyReopened { property_id: reopened })?;
        }
        let blocking = self.read(|st| st.current_lint(&module).is_some_and(|l| l.blocking() > 0));
        if blocking {
            self.check_module(&module)?;
        } else {
            let revision = self.read(|st| st.artifacts[&module].revision);
            self.emit(RunEvent::DesignCheckPassed { module, revision })?;
        }
        Ok(())
    }

    /// Coverage-closure rounds. A round is fruitless when it proposes
    /// nothing, gains nothing, or adds a property that is not proven; its
    /// properties are retracted.
    fn closure(&mut self) -> Result<(), ExecError> {
        let threshold = self.threshold();
        let span_start = self.read(|st| st.last_seq + 1);
        let mut round = self.read(|st| st.loop_rounds.get("closure").copied().unwrap_or(0));
        let mut fruitless_run = 0;
        let coverage_agent = RoleId::CoverageAgent.agent();
        loop {
            let (before, done, uncovered, bodies, default_entry) = self.read(|st| {
                let cov = st.coverage.as_ref().expect("coverage ran before closure");
                (
                    cov.consolidated_pct,
                    cov.meets(st.coverage_target()) || cov.gap_fully_waived(),
                    cov.unwaived().join(", "),
                    st.properties.iter().map(|p| p.body_text.clone()).collect::<Vec<_>>(),
                    st.vplan
                        .as_ref()
                        .and_then(|v| v.entries.first())
                        .map(|e| e.entry_id.clone())
                        .unwrap_or_default(),
                )
            });
            if done {
                return Ok(());
            }
            round += 1;
            self.open(&[coverage_agent.clone(), code_executor()])?;
            let text = self.propose_text(
                &coverage_agent,
                "closure",
                &ctx(&[
                    ("coverage", format!("{before:.2}")),
                    (
                        "uncovered",
                        if uncovered.is_empty() {
                            NONE.into()
                        } else {
                            uncovered.clone()
                        },
                    ),
                    ("properties", bodies.join("\n")),
                ]),
            )?;
            let mut seen: Vec<String> = bodies.iter().map(|b| normalize(b)).collect();
            let parsed: Vec<ParsedProperty> = parse_sva(&text, &default_entry)
                .unwrap_or_default()
                .into_iter()
                .filter(|p| self.read(|st| st.vplan.as_ref().is_some_and(|v| v.entry(&p.entry_id).is_some())))
                .filter(|p| {
                    let n = normalize(&p.body);
                    let fresh = !seen.contains(&n);
                    seen.push(n);
                    fresh
                })
                .collect();
            let new_props = self.new_properties(&parsed);
            let new_ids: Vec<PropertyId> = new_props.iter().map(|p| p.property_id.clone()).collect();
            let mut after = before;
            if new_props.is_empty() {
                self.say(
                    &code_executor(),
                    MessagePayload::Text {
                        text: "no new properties to check".into(),
                    },
                    None,
                )?;
            } else {
                self.emit(RunEvent::PropertiesCommitted { properties: new_props })?;
                self.formal_unchecked()?;
                let (digest, summary) = self.coverage()?;
                self.report(ToolKind::Coverage, digest, summary)?;
                after = self.read(|st| st.coverage.as_ref().map_or(before, |c| c.consolidated_pct));
            }
            self.close()?;

            let gain = after - before;
            let all_proven = self.read(|st| {
                new_ids
                    .iter()
                    .all(|id| st.property(id).is_some_and(|p| p.status == PropertyStatus::Proven))
            });
            let fruitless = new_ids.is_empty() || gain <= 0.0 || !all_proven;
            if fruitless && !new_ids.is_empty() {
                self.emit(RunEvent::PropertiesRetracted {
                    property_ids: new_ids.clone(),
                })?;
                if gain > 0.0 {
                    self.open(&[code_executor()])?;
                    let (digest, summary) = self.coverage()?;
                    self.report(ToolKind::Coverage, digest, summary)?;
                    self.close()?;
                }
            }
            self.emit(RunEvent::LoopRound {
                name: "closure".into(),
                round,
                fruitless,
            })?;
            fruitless_run = if fruitless { fruitless_run + 1 } else { 0 };
            if fruitless_run >= threshold {
                let span = self.span_to_now(span_start);
                let refs = self.read(|st| {
                    st.coverage
                        .as_ref()
                        .map(|c| c.unwaived().into_iter().map(str::to_string).collect())
                        .unwrap_or_default()
                });
                self.escalate(
                    Trigger::ZeroProgressCoverage,
                    "closure",
                    Stream::Verification,
                    span,
                    refs,
                )?;
                return Ok(());
            }
        }
    }
}

impl Session for Executor {
    type Error = ExecError;

    fn open_floor(&mut self, participants: &[AgentId]) -> Result<(), ExecError> {
        self.open(participants)
    }

    fn close_floor(&mut self) -> Result<(), ExecError> {
        self.close()
    }

    fn current_seq(&self) -> u64 {
        self.read(|st| st.last_seq)
    }

    fn repost_critique(&mut self, reviewer: &AgentId, critique: &CritiqueResult) -> Result<(), ExecError> {
        self.say(reviewer, MessagePayload::Critique(critique.clone()), None)?;
        Ok(())
    }

    fn open_ticket(&mut self, trigger: Trigger, source: &str, span: (u64, u64)) -> Result<TicketId, ExecError> {
        let stream = self.stream_for(source);
        self.escalate(trigger, source, stream, span, Vec::new())
    }
}

// -- deliberation tasks ------------------------------------------------------

struct PlanTask<P> {
    source: &'static str,
    task: &'static str,
    parse: fn(&str) -> Result<P, String>,
    parse_error: Option<String>,
}

impl<P> PlanTask<P> {
    fn proposer(&self) -> AgentId {
        if self.source == "plan:vplan" {
            RoleId::VerificationLead.agent()
        } else {
            RoleId::DesignLead.agent()
        }
    }

    fn attempt(&mut self, s: &mut Executor, extra: &[(String, String)]) -> Result<Option<P>, ExecError> {
        let text = s.propose_text(&self.proposer(), self.task, extra)?;
        match (self.parse)(&text) {
            Ok(p) => {
                self.parse_error = None;
                Ok(Some(p))
            }
            Err(e) => {
                self.parse_error = Some(e);
                Ok(None)
            }
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_default()
}

impl<P: Clone + PartialEq + Serialize> DeliberationTask<Executor> for PlanTask<P> {
    type Payload = P;

    fn source(&self) -> String {
        self.source.to_string()
    }

    fn propose(&mut self, s: &mut Executor, _: u32) -> Result<Option<P>, ExecError> {
        self.attempt(s, &[])
    }

    fn revise(
        &mut self,
        s: &mut Executor,
        previous: Option<&P>,
        critiques: &[CritiqueResult],
        _: u32,
    ) -> Result<Option<P>, ExecError> {
        let extra = ctx(&[
            ("feedback", render_issues(critiques, self.parse_error.as_deref())),
            ("previous", previous.map_or(NONE.to_string(), pretty)),
        ]);
        self.attempt(s, &extra)
    }

    fn review(
        &mut self,
        s: &mut Executor,
        reviewer: &AgentId,
        payload: Option<&P>,
        _: u32,
    ) -> Result<CritiqueResult, ExecError> {
        let mut issues = Vec::new();
        if payload.is_none() {
            let why = self
                .parse_error
                .clone()
                .unwrap_or_else(|| "unparseable response".into());
            issues.push(Issue::new(IssueKind::SyntaxError, why, None));
        }
        let text = payload.map_or("(unparseable)".to_string(), pretty);
        s.critic_review(reviewer, &format!("review:{}", self.source), text, issues)
    }
}

struct BlockTask {
    module: String,
    role: String,
    parse_error: Option<String>,
}

impl BlockTask {
    fn attempt(&mut self, s: &mut Executor, mut extra: Vec<(String, String)>) -> Result<Option<String>, ExecError> {
        extra.extend(ctx(&[
            ("module", self.module.clone()),
            ("block_role", self.role.clone()),
        ]));
        let text = s.propose_text(&RoleId::RtlAgent.agent(), &format!("block:{}", self.module), &extra)?;
        match parse_rtl(&text) {
            Ok(src) => {
                self.parse_error = None;
                Ok(Some(src))
            }
            Err(e) => {
                self.parse_error = Some(e);
                Ok(None)
            }
        }
    }
}

impl DeliberationTask<Executor> for BlockTask {
    type Payload = String;

    fn source(&self) -> String {
        format!("block:{}", self.module)
    }

    fn propose(&mut self, s: &mut Executor, _: u32) -> Result<Option<String>, ExecError> {
        self.attempt(s, Vec::new())
    }

    fn revise(
        &mut self,
        s: &mut Executor,
        previous: Option<&String>,
        critiques: &[CritiqueResult],
        _: u32,
    ) -> Result<Option<String>, ExecError> {
        let extra = ctx(&[
            ("feedback", render_issues(critiques, self.parse_error.as_deref())),
            ("previous", previous.cloned().unwrap_or_else(|| NONE.into())),
        ]);
        self.attempt(s, extra)
    }

    fn review(
        &mut self,
        s: &mut Executor,
        reviewer: &AgentId,
        payload: Option<&String>,
        _: u32,
    ) -> Result<CritiqueResult, ExecError> {
        let issues = match payload {
            None => vec![Issue::new(
                IssueKind::SyntaxError,
                self.parse_error.clone().unwrap_or_else(|| "no RTL block".into()),
                None,
            )],
            Some(src) => {
                let markers = s.read(|st| st.placeholder_markers.clone());
                scan_placeholders(src, &markers, &self.module)
            }
        };
        let text = payload.cloned().unwrap_or_else(|| "(unparseable)".into());
        s.critic_review(reviewer, &format!("review:block:{}", self.module), text, issues)
    }
}

struct PropsTask {
    entry: VPlanEntry,
    parse_error: Option<String>,
}

impl PropsTask {
    fn attempt(
        &mut self,
        s: &mut Executor,
        mut extra: Vec<(String, String)>,
    ) -> Result<Option<Vec<ParsedProperty>>, ExecError> {
        extra.extend(ctx(&[
            ("entry_id", self.entry.entry_id.clone()),
            ("intent", self.entry.intent.clone()),
            ("property_type", kebab(&self.entry.property_type)),
            ("signals", self.entry.target_signals.join(", ")),
        ]));
        let text = s.propose_text(
            &RoleId::FormalAgent.agent(),
            &format!("props:{}", self.entry.entry_id),
            &extra,
        )?;
        match parse_sva(&text, &self.entry.entry_id) {
            Ok(props) => {
                self.parse_error = None;
                Ok(Some(props))
            }
            Err(e) => {
                self.parse_error = Some(e);
                Ok(None)
            }
        }
    }
}

fn render_props(props: &[ParsedProperty]) -> String {
    props
        .iter()
        .map(|p| format!("[{}] {}", p.entry_id, p.body))
        .collect::<Vec<_>>()
        .join("\n")
}

impl DeliberationTask<Executor> for PropsTask {
    type Payload = Vec<ParsedProperty>;

    fn source(&self) -> String {
        format!("props:{}", self.entry.entry_id)
    }

    fn propose(&mut self, s: &mut Executor, _: u32) -> Result<Option<Self::Payload>, ExecError> {
        self.attempt(s, Vec::new())
    }

    fn revise(
        &mut self,
        s: &mut Executor,
        previous: Option<&Self::Payload>,
        critiques: &[CritiqueResult],
        _: u32,
    ) -> Result<Option<Self::Payload>, ExecError> {
        let extra = ctx(&[
            ("feedback", render_issues(critiques, self.parse_error.as_deref())),
            ("previous", previous.map_or(NONE.to_string(), |p| render_props(p))),
        ]);
        self.attempt(s, extra)
    }

    fn review(
        &mut self,
        s: &mut Executor,
        reviewer: &AgentId,
        payload: Option<&Self::Payload>,
        _: u32,
    ) -> Result<CritiqueResult, ExecError> {
        let mut issues = Vec::new();
        match payload {
            None => issues.push(Issue::new(
                IssueKind::SyntaxError,
                self.parse_error.clone().unwrap_or_else(|| "no property block".into()),
                None,
            )),
            Some(props) if props.is_empty() => issues.push(Issue::new(IssueKind::MissingLogic, "no properties", None)),
            Some(props) => {
                for p in props.iter().filter(|p| p.entry_id != self.entry.entry_id) {
                    issues.push(Issue::new(
                        IssueKind::SpecMismatch,
                        format!("property belongs to `{}`, not `{}`", p.entry_id, self.entry.entry_id),
                        None,
                    ));
                }
                let existing = s.read(|st| st.properties.iter().map(|p| p.body_text.clone()).collect::<Vec<_>>());
                let bodies: Vec<String> = props.iter().map(|p| p.body.clone()).collect();
                issues.extend(crate::agents::duplicate_bodies(&bodies, &existing));
            }
        }
        let text = payload.map_or("(unparseable)".to_string(), |p| render_props(p));
        s.critic_review(reviewer, &format!("review:props:{}", self.entry.entry_id), text, issues)
    }
}

/// The execution-phase check loop for one module. The payload is the
/// revision under review.
struct CheckTask {
    module: String,
    parse_error: Option<String>,
}

impl CheckTask {
    fn executor_review(&mut self, s: &mut Executor, payload: Option<&u32>) -> Result<CritiqueResult, ExecError> {
        if payload.is_none() {
            let why = self.parse_error.clone().unwrap_or_else(|| "no RTL block".into());
            s.say(
                &code_executor(),
                MessagePayload::Text {
                    text: format!("nothing to lint: {why}"),
                },
                None,
            )?;
            return Ok(CritiqueResult::from_issues(vec![Issue::new(
                IssueKind::SyntaxError,
                why,
                None,
            )]));
        }
        let (digest, summary) = s.lint_module(&self.module)?;
        let issues = s.read(|st| {
            let mut issues: Vec<Issue> = st
                .current_lint(&self.module)
                .map(|l| {
                    l.findings
                        .iter()
                        .filter(|f| f.severity.blocks_signoff())
                        .map(|f| {
                            let kind = match f.category {
                                LintCategory::Placeholder => IssueKind::MissingLogic,
                                _ => IssueKind::SyntaxError,
                            };
                            Issue::new(
                                kind,
                                format!("{} {}", f.rule_code, f.message),
                                Some(f.location.to_string()),
                            )
                        })
                        .collect()
                })
                .unwrap_or_default();
            if st.current_reference(&self.module).and_then(|r| r.pass) == Some(false) {
                issues.push(Issue::new(
                    IssueKind::SpecMismatch,
                    "output differs from the reference model",
                    None,
                ));
            }
            issues
        });
        s.report(ToolKind::Lint, digest, summary)?;
        Ok(CritiqueResult::from_issues(issues))
    }
}

impl DeliberationTask<Executor> for CheckTask {
    type Payload = u32;

    fn source(&self) -> String {
        format!("check:{}", self.module)
    }

    fn propose(&mut self, s: &mut Executor, _: u32) -> Result<Option<u32>, ExecError> {
        let revision = s.read(|st| st.artifacts[&self.module].revision);
        s.say(
            &RoleId::RtlAgent.agent(),
            MessagePayload::ArtifactRef {
                module: self.module.clone(),
                revision,
            },
            None,
        )?;
        Ok(Some(revision))
    }

    fn revise(
        &mut self,
        s: &mut Executor,
        _: Option<&u32>,
        critiques: &[CritiqueResult],
        _: u32,
    ) -> Result<Option<u32>, ExecError> {
        let current = s.read(|st| st.artifacts[&self.module].clone());
        let extra = ctx(&[
            ("module", self.module.clone()),
            ("previous", current.source_text.clone()),
            ("feedback", render_issues(critiques, self.parse_error.as_deref())),
        ]);
        let text = s.propose_text(&RoleId::RtlAgent.agent(), &format!("fix:{}", self.module), &extra)?;
        let source = match parse_rtl(&text) {
            Ok(src) => src,
            Err(e) => {
                self.parse_error = Some(e);
                return Ok(None);
            }
        };
        self.parse_error = None;
        if source == current.source_text {
            return Ok(Some(current.revision));
        }
        let next = current.revised(source, ArtifactProvenance::AgentGenerated);
        let revision = next.revision;
        s.emit(RunEvent::ArtifactCommitted { artifact: next })?;
        Ok(Some(revision))
    }

    fn review(
        &mut self,
        s: &mut Executor,
        reviewer: &AgentId,
        payload: Option<&u32>,
        _: u32,
    ) -> Result<CritiqueResult, ExecError> {
        if reviewer == &code_executor() {
            return self.executor_review(s, payload);
        }
        let issues = match payload {
            None => vec![Issue::new(IssueKind::SyntaxError, "no RTL block", None)],
            Some(_) => Vec::new(),
        };
        let text = s.read(|st| st.artifacts[&self.module].source_text.clone());
        s.critic_review(reviewer, &format!("check:{}", self.module), text, issues)
    }
}
