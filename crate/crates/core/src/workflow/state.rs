//! The run state machine. A run's state is the left fold of its event log
//! through [`RunState::apply`].

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::events::{RunEvent, TaskDescriptor, TaskKind};
use super::signoff::{sign_off, SignOffReport};
use crate::agents::{role_of, scan_placeholders, DeliberationResult};
use crate::hitl::{apply_action, EscalationTicket, Resolution, ResolutionKind, TicketStatus, Trigger};
use crate::metrics::{classify_logical_accuracy, AccuracyEvidence};
use crate::model::{
    canonical_json, module_name_for, AccuracyClass, AgentId, ArtifactProvenance, CexRecord, CoverageSnapshot,
    DesignSpecification, Digest, LintFinding, Microarchitecture, Phase, PropertyId, PropertyProvenance, PropertyStatus,
    RtlArtifact, RunConfig, RunId, Severity, Stream, SvaProperty, TicketId, VerificationPlan, SOURCE_LANGUAGE,
};
use crate::tooling::{FormalVerdict, ToolKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("illegal transition in phase {phase:?} on {event}: {reason}")]
pub struct IllegalTransition {
    pub phase: Phase,
    pub event: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LintRecord {
    pub revision: u32,
    pub findings: Vec<LintFinding>,
}

impl LintRecord {
    pub fn blocking(&self) -> usize {
        self.findings.iter().filter(|f| f.severity.blocks_signoff()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRecord {
    pub revision: u32,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliberationRecord {
    pub source: String,
    pub result: DeliberationResult,
    pub iterations: u32,
}

/// Design-stream columns frozen at the autonomous boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignSnapshot {
    pub lint_errors: u32,
    pub lint_fatal: bool,
    pub accuracy: AccuracyClass,
    pub at_seq: u64,
}

/// Verification-stream columns frozen at the autonomous boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationSnapshot {
    pub properties: u32,
    pub coverage_pct: f64,
    pub cex: u32,
    pub at_seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsAccumulator {
    pub design_mas: Option<DesignSnapshot>,
    pub verification_mas: Option<VerificationSnapshot>,
    pub hitl_minutes: BTreeMap<Stream, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunState {
    pub run_id: RunId,
    pub config: Option<RunConfig>,
    pub spec: Option<DesignSpecification>,
    pub definition_hash: Option<Digest>,
    pub placeholder_markers: Vec<String>,
    pub phase: Phase,
    pub last_seq: u64,
    pub step_count: u64,
    /// Hash chain over every event payload, so chat content is covered by
    /// the state hash even though the state does not keep the transcript.
    pub transcript_digest: Digest,
    pub floor: Option<Vec<AgentId>>,
    /// Backend calls so far per `agent/task`.
    pub llm_iterations: BTreeMap<String, u32>,
    pub microarchitecture: Option<Microarchitecture>,
    pub vplan: Option<VerificationPlan>,
    /// Module names in microarchitecture order.
    pub modules: Vec<String>,
    pub tasks: Vec<TaskDescriptor>,
    pub artifacts: BTreeMap<String, RtlArtifact>,
    pub lint: BTreeMap<String, LintRecord>,
    pub reference: BTreeMap<String, ReferenceRecord>,
    pub design_checked: BTreeMap<String, u32>,
    pub properties: Vec<SvaProperty>,
    pub property_revisions: BTreeMap<PropertyId, u32>,
    pub property_counters: BTreeMap<String, u32>,
    pub human_counters: BTreeMap<String, u32>,
    pub cex: BTreeMap<PropertyId, CexRecord>,
    pub coverage: Option<CoverageSnapshot>,
    pub waivers: BTreeMap<String, String>,
    pub tool_invocations: BTreeMap<ToolKind, u32>,
    pub loop_rounds: BTreeMap<String, u32>,
    pub tickets: Vec<EscalationTicket>,
    pub pending_resolutions: BTreeMap<TicketId, Resolution>,
    pub resolutions: BTreeMap<TicketId, Resolution>,
    pub deliberations: Vec<DeliberationRecord>,
    pub streams_completed: BTreeSet<Stream>,
    pub metrics: MetricsAccumulator,
    pub signoff: Option<SignOffReport>,
    pub abort_reason: Option<String>,
}

impl Default for RunState {
    fn default() -> Self {
        Self {
            run_id: RunId::new(""),
            config: None,
            spec: None,
            definition_hash: None,
            placeholder_markers: Vec::new(),
            phase: Phase::Planning,
            last_seq: 0,
            step_count: 0,
            transcript_digest: Digest::zero(),
            floor: None,
            llm_iterations: BTreeMap::new(),
            microarchitecture: None,
            vplan: None,
            modules: Vec::new(),
            tasks: Vec::new(),
            artifacts: BTreeMap::new(),
            lint: BTreeMap::new(),
            reference: BTreeMap::new(),
            design_checked: BTreeMap::new(),
            properties: Vec::new(),
            property_revisions: BTreeMap::new(),
            property_counters: BTreeMap::new(),
            human_counters: BTreeMap::new(),
            cex: BTreeMap::new(),
            coverage: None,
            waivers: BTreeMap::new(),
            tool_invocations: BTreeMap::new(),
            loop_rounds: BTreeMap::new(),
            tickets: Vec::new(),
            pending_resolutions: BTreeMap::new(),
            resolutions: BTreeMap::new(),
            deliberations: Vec::new(),
            streams_completed: BTreeSet::new(),
            metrics: MetricsAccumulator::default(),
            signoff: None,
            abort_reason: None,
        }
    }
}

/// Pure transition: the state after `event`, plus the tasks it spawns.
pub fn advance_run(state: &RunState, event: &RunEvent) -> Result<(RunState, Vec<TaskDescriptor>), IllegalTransition> {
    let mut next = state.clone();
    let tasks = next.apply(event)?;
    Ok((next, tasks))
}

/// Key for per-agent, per-task backend call counters.
pub fn llm_key(agent: &AgentId, task: &str) -> String {
    format!("{agent}/{task}")
}

impl RunState {
    pub fn design_id(&self) -> &str {
        self.spec.as_ref().map_or("", |s| s.design_id.as_str())
    }

    pub fn coverage_target(&self) -> f64 {
        self.config
            .as_ref()
            .and_then(|c| c.coverage_target_pct)
            .or(self.spec.as_ref().map(|s| s.coverage_target_pct))
            .unwrap_or(95.0)
    }

    pub fn iteration_threshold(&self) -> u32 {
        self.config.as_ref().map_or(5, |c| c.iteration_threshold)
    }

    pub fn ticket(&self, id: &TicketId) -> Option<&EscalationTicket> {
        self.tickets.iter().find(|t| &t.ticket_id == id)
    }

    pub fn open_tickets(&self) -> impl Iterator<Item = &EscalationTicket> {
        self.tickets.iter().filter(|t| t.status.is_pending())
    }

    pub fn property(&self, id: &PropertyId) -> Option<&SvaProperty> {
        self.properties.iter().find(|p| &p.property_id == id)
    }

    pub fn property_revision(&self, id: &PropertyId) -> u32 {
        self.property_revisions.get(id).copied().unwrap_or(1)
    }

    pub fn properties_with(&self, status: PropertyStatus) -> Vec<&SvaProperty> {
        self.properties.iter().filter(|p| p.status == status).collect()
    }

    pub fn llm_iteration(&self, agent: &AgentId, task: &str) -> u32 {
        self.llm_iterations.get(&llm_key(agent, task)).copied().unwrap_or(0)
    }

    pub fn invocations(&self, kind: ToolKind) -> u32 {
        self.tool_invocations.get(&kind).copied().unwrap_or(0)
    }

    /// Lint record of the module's current revision, if it was linted.
    pub fn current_lint(&self, module: &str) -> Option<&LintRecord> {
        let revision = self.artifacts.get(module)?.revision;
        self.lint.get(module).filter(|l| l.revision == revision)
    }

    pub fn current_reference(&self, module: &str) -> Option<&ReferenceRecord> {
        let revision = self.artifacts.get(module)?.revision;
        self.reference.get(module).filter(|r| r.revision == revision)
    }

    /// Fatal plus error findings over the latest lint of every module.
    pub fn lint_errors(&self) -> (u32, bool) {
        let findings = self.lint.values().flat_map(|l| &l.findings);
        let mut count = 0;
        let mut fatal = false;
        for f in findings {
            if f.severity.blocks_signoff() {
                count += 1;
            }
            fatal |= f.severity == Severity::Fatal;
        }
        (count, fatal)
    }

    /// Worst accuracy class over all modules, from the latest evidence.
    pub fn accuracy(&self) -> AccuracyClass {
        self.modules
            .iter()
            .filter_map(|m| self.artifacts.get(m).map(|a| (m, a)))
            .map(|(module, artifact)| {
                let findings: &[LintFinding] = self.lint.get(module).map_or(&[], |l| l.findings.as_slice());
                let functional_pass = self.reference.get(module).and_then(|r| r.pass);
                let placeholder_hits =
                    scan_placeholders(&artifact.source_text, &self.placeholder_markers, module).len();
                classify_logical_accuracy(&AccuracyEvidence {
                    findings,
                    functional_pass,
                    placeholder_hits,
                })
            })
            .max()
            .unwrap_or(AccuracyClass::Incomplete)
    }

    fn all_blocks_generated(&self) -> bool {
        !self.modules.is_empty() && self.modules.iter().all(|m| self.artifacts.contains_key(m))
    }

    fn snapshot_design(&mut self) {
        if self.metrics.design_mas.is_none() && self.all_blocks_generated() {
            let (lint_errors, lint_fatal) = self.lint_errors();
            self.metrics.design_mas = Some(DesignSnapshot {
                lint_errors,
                lint_fatal,
                accuracy: self.accuracy(),
                at_seq: self.last_seq + 1,
            });
        }
    }

    fn snapshot_verification(&mut self) {
        let formal_ran = self.invocations(ToolKind::Formal) > 0;
        if self.metrics.verification_mas.is_none() && formal_ran {
            if let Some(cov) = &self.coverage {
                self.metrics.verification_mas = Some(VerificationSnapshot {
                    properties: self.properties.len() as u32,
                    coverage_pct: cov.consolidated_pct,
                    cex: self.properties_with(PropertyStatus::Cex).len() as u32,
                    at_seq: self.last_seq + 1,
                });
            }
        }
    }

    fn next_task_id(&self, kind: TaskKind) -> String {
        format!("{}-{}", kind.as_str(), self.tasks.len() + 1)
    }

    fn push_task(&mut self, stream: Stream, kind: TaskKind, refs: Vec<String>) -> TaskDescriptor {
        let task = TaskDescriptor {
            task_id: self.next_task_id(kind),
            stream,
            kind,
            trigger_seq: Some(self.last_seq + 1),
            refs,
        };
        self.tasks.push(task.clone());
        task
    }

    fn release_tickets(&mut self) {
        for t in self.tickets.iter_mut().filter(|t| t.status.is_pending()) {
            t.status = TicketStatus::Rejected;
        }
        self.pending_resolutions.clear();
    }

    /// Applies one event. Events are checked before anything is mutated, so
    /// a rejected event leaves the state as it was.
    pub fn apply(&mut self, event: &RunEvent) -> Result<Vec<TaskDescriptor>, IllegalTransition> {
        let name = event.name();
        let phase = self.phase;
        let illegal = |reason: String| IllegalTransition {
            phase,
            event: name,
            reason,
        };
        macro_rules! ensure {
            ($cond:expr, $($arg:tt)+) => {
                if !$cond {
                    return Err(illegal(format!($($arg)+)));
                }
            };
        }

        let created = self.last_seq > 0;
        if let RunEvent::RunCreated { .. } = event {
            ensure!(!created, "run already created");
        } else {
            ensure!(created, "run not created");
            ensure!(!phase.is_terminal(), "run is terminated");
        }
        let blocked = phase == Phase::BlockedHitl;
        let hitl_event = matches!(
            event,
            RunEvent::ResolutionSubmitted { .. }
                | RunEvent::ResolutionApplied { .. }
                | RunEvent::Aborted { .. }
                | RunEvent::TicketOpened { .. }
                | RunEvent::DeadLetter { .. }
        );
        ensure!(!blocked || hitl_event, "run is blocked on a ticket");

        let mut tasks = Vec::new();
        match event {
            RunEvent::RunCreated {
                run_id,
                config,
                spec,
                definition_hash,
                placeholder_markers,
            } => {
                ensure!(!run_id.as_str().is_empty(), "empty run id");
                self.run_id = run_id.clone();
                self.config = Some(config.clone());
                self.spec = Some(spec.clone());
                self.definition_hash = Some(definition_hash.clone());
                self.placeholder_markers = placeholder_markers.clone();
                self.phase = Phase::Planning;
            }
            RunEvent::PhaseChanged { to } => {
                let next_rank = phase.rank().map(|r| r + 1);
                ensure!(
                    matches!(to, Phase::Development | Phase::Execution) && to.rank() == next_rank,
                    "cannot move from {phase:?} to {to:?}"
                );
                if *to == Phase::Development {
                    ensure!(
                        self.microarchitecture.is_some() && self.vplan.is_some(),
                        "plans not accepted"
                    );
                } else {
                    ensure!(self.all_blocks_generated(), "not every block has RTL");
                }
                ensure!(self.floor.is_none(), "a floor is still open");
                self.phase = *to;
            }
            RunEvent::FloorOpened { participants } => {
                ensure!(self.floor.is_none(), "a floor is already open");
                ensure!(!participants.is_empty(), "empty floor");
                self.floor = Some(participants.clone());
            }
            RunEvent::FloorClosed => {
                ensure!(self.floor.is_some(), "no floor is open");
                self.floor = None;
            }
            RunEvent::Chat(msg) => {
                ensure!(
                    msg.seq == self.last_seq + 1,
                    "message seq {} is not {}",
                    msg.seq,
                    self.last_seq + 1
                );
                let on_floor = self.floor.as_ref().is_some_and(|f| f.contains(&msg.sender));
                ensure!(on_floor, "`{}` is not on the floor", msg.sender);
                if let crate::bus::MessagePayload::Critique(c) = &msg.payload {
                    ensure!(c.is_consistent(), "critique verdict disagrees with its issues");
                }
                if let Some(trace) = &msg.llm {
                    let key = llm_key(&msg.sender, &trace.context.task_id);
                    let expected = self.llm_iterations.get(&key).copied().unwrap_or(0) + 1;
                    ensure!(
                        trace.context.iteration == expected,
                        "iteration {} for {key}, expected {expected}",
                        trace.context.iteration
                    );
                    ensure!(role_of(&msg.sender).is_some(), "unknown role for `{}`", msg.sender);
                    self.llm_iterations.insert(key, expected);
                }
            }
            RunEvent::DeadLetter { .. } | RunEvent::ToolFailure { .. } => {}
            RunEvent::MicroarchitectureAccepted { microarchitecture } => {
                ensure!(phase == Phase::Planning, "plans are accepted in planning");
                ensure!(self.microarchitecture.is_none(), "microarchitecture already accepted");
                microarchitecture.validate().map_err(illegal)?;
                let modules: Vec<String> = microarchitecture
                    .datapath_components
                    .iter()
                    .map(|c| module_name_for(&c.name))
                    .collect();
                let unique: BTreeSet<&String> = modules.iter().collect();
                ensure!(unique.len() == modules.len(), "two blocks map to the same module name");
                self.microarchitecture = Some(microarchitecture.clone());
                self.modules = modules;
            }
            RunEvent::VerificationPlanAccepted { vplan } => {
                ensure!(phase == Phase::Planning, "plans are accepted in planning");
                ensure!(self.vplan.is_none(), "vPlan already accepted");
                vplan.validate().map_err(illegal)?;
                self.vplan = Some(vplan.clone());
            }
            RunEvent::TasksDispatched { design, verification } => {
                ensure!(phase == Phase::Development, "tasks are dispatched in development");
                ensure!(self.tasks.is_empty(), "tasks already dispatched");
                let (Some(arch), Some(plan)) = (&self.microarchitecture, &self.vplan) else {
                    return Err(illegal("plans missing".into()));
                };
                let expected = super::dispatch_tasks(arch, plan).map_err(|e| illegal(e.to_string()))?;
                ensure!(
                    (design, verification) == (&expected.0, &expected.1),
                    "dispatched tasks differ from the plans"
                );
                self.tasks.extend(design.iter().cloned());
                self.tasks.extend(verification.iter().cloned());
                tasks.extend(design.iter().cloned());
                tasks.extend(verification.iter().cloned());
            }
            RunEvent::DeliberationConcluded {
                source,
                result,
                iterations,
            } => {
                ensure!(
                    *iterations >= 1 && *iterations <= self.iteration_threshold(),
                    "iterations out of range"
                );
                self.deliberations.push(DeliberationRecord {
                    source: source.clone(),
                    result: *result,
                    iterations: *iterations,
                });
            }
            RunEvent::ArtifactCommitted { artifact } => {
                ensure!(
                    matches!(phase, Phase::Development | Phase::Execution),
                    "RTL is committed in development or execution"
                );
                ensure!(
                    self.modules.contains(&artifact.module_name),
                    "unknown module `{}`",
                    artifact.module_name
                );
                ensure!(!artifact.source_text.trim().is_empty(), "empty source");
                ensure!(artifact.source_language_tag == SOURCE_LANGUAGE, "wrong language tag");
                ensure!(
                    artifact.provenance == ArtifactProvenance::AgentGenerated,
                    "human patches arrive as resolutions"
                );
                let expected = self.artifacts.get(&artifact.module_name).map_or(1, |a| a.revision + 1);
                ensure!(
                    artifact.revision == expected,
                    "revision {} should be {expected}",
                    artifact.revision
                );
                self.artifacts.insert(artifact.module_name.clone(), artifact.clone());
            }
            RunEvent::PropertiesCommitted { properties } => {
                ensure!(
                    matches!(phase, Phase::Development | Phase::Execution),
                    "properties are committed in development or execution"
                );
                let Some(plan) = &self.vplan else {
                    return Err(illegal("no vPlan".into()));
                };
                let mut counters = self.property_counters.clone();
                for p in properties {
                    ensure!(
                        plan.entry(&p.vplan_entry_id).is_some(),
                        "unknown vPlan entry `{}`",
                        p.vplan_entry_id
                    );
                    ensure!(p.status == PropertyStatus::Unchecked, "new properties are unchecked");
                    ensure!(
                        p.provenance == PropertyProvenance::AgentGenerated,
                        "human properties arrive as resolutions"
                    );
                    ensure!(!p.body_text.trim().is_empty(), "empty property body");
                    let n = counters.entry(p.vplan_entry_id.clone()).or_insert(0);
                    *n += 1;
                    let expected = format!("{}.{}", p.vplan_entry_id, n);
                    ensure!(
                        p.property_id.as_str() == expected,
                        "property id `{}` should be `{expected}`",
                        p.property_id
                    );
                }
                self.property_counters = counters;
                for p in properties {
                    self.property_revisions.insert(p.property_id.clone(), 1);
                    self.properties.push(p.clone());
                }
            }
            RunEvent::PropertiesRetracted { property_ids } => {
                ensure!(phase == Phase::Execution, "retraction happens in execution");
                for id in property_ids {
                    ensure!(self.property(id).is_some(), "no property `{id}`");
                }
                let drop: BTreeSet<&PropertyId> = property_ids.iter().collect();
                self.properties.retain(|p| !drop.contains(&p.property_id));
                for id in property_ids {
                    self.cex.remove(id);
                    self.property_revisions.remove(id);
                }
            }
            RunEvent::PropertyRevised { property_id, body } => {
                ensure!(phase == Phase::Execution, "fixes happen in execution");
                ensure!(!body.trim().is_empty(), "empty property body");
                let Some(p) = self.properties.iter_mut().find(|p| &p.property_id == property_id) else {
                    return Err(illegal(format!("no property `{property_id}`")));
                };
                ensure!(
                    p.status.can_transition_to(PropertyStatus::Unchecked),
                    "`{property_id}` is {:?}",
                    p.status
                );
                p.body_text = body.clone();
                p.status = PropertyStatus::Unchecked;
                *self.property_revisions.entry(property_id.clone()).or_insert(1) += 1;
                self.cex.remove(property_id);
            }
            RunEvent::PropertyReopened { property_id } => {
                ensure!(phase == Phase::Execution, "fixes happen in execution");
                let Some(p) = self.properties.iter_mut().find(|p| &p.property_id == property_id) else {
                    return Err(illegal(format!("no property `{property_id}`")));
                };
                ensure!(
                    p.status.can_transition_to(PropertyStatus::Unchecked),
                    "`{property_id}` is {:?}",
                    p.status
                );
                p.status = PropertyStatus::Unchecked;
                self.cex.remove(property_id);
            }
            RunEvent::LintReported {
                module,
                revision,
                findings,
                ..
            } => {
                ensure!(phase == Phase::Execution, "tools run in execution");
                let current = self.artifacts.get(module).map(|a| a.revision);
                ensure!(current == Some(*revision), "lint of `{module}` r{revision} is stale");
                ensure!(findings.iter().all(|f| f.location.line >= 1), "finding without a line");
                *self.tool_invocations.entry(ToolKind::Lint).or_default() += 1;
                let record = LintRecord {
                    revision: *revision,
                    findings: findings.clone(),
                };
                let blocking = record.blocking();
                self.lint.insert(module.clone(), record);
                if blocking > 0 {
                    tasks.push(self.push_task(Stream::Design, TaskKind::FixLint, vec![format!("{module}@{revision}")]));
                }
            }
            RunEvent::ReferenceChecked { module, revision, pass } => {
                ensure!(phase == Phase::Execution, "tools run in execution");
                let current = self.artifacts.get(module).map(|a| a.revision);
                ensure!(
                    current == Some(*revision),
                    "reference check of `{module}` r{revision} is stale"
                );
                self.reference.insert(
                    module.clone(),
                    ReferenceRecord {
                        revision: *revision,
                        pass: *pass,
                    },
                );
            }
            RunEvent::FormalReported { result, .. } => {
                ensure!(phase == Phase::Execution, "tools run in execution");
                ensure!(!result.verdicts.is_empty(), "empty formal result");
                let mut seen = BTreeSet::new();
                for v in &result.verdicts {
                    ensure!(seen.insert(&v.property_id), "duplicate verdict for `{}`", v.property_id);
                    let Some(p) = self.property(&v.property_id) else {
                        return Err(illegal(format!("verdict for unknown property `{}`", v.property_id)));
                    };
                    ensure!(
                        p.status.can_transition_to(v.verdict.status()),
                        "`{}` cannot go from {:?} to {:?}",
                        v.property_id,
                        p.status,
                        v.verdict.status()
                    );
                    if let FormalVerdict::Cex(c) = &v.verdict {
                        ensure!(c.property_id == v.property_id, "counterexample names another property");
                    }
                }
                *self.tool_invocations.entry(ToolKind::Formal).or_default() += 1;
                let mut cexes = Vec::new();
                for v in &result.verdicts {
                    if let Some(p) = self.properties.iter_mut().find(|p| p.property_id == v.property_id) {
                        p.status = v.verdict.status();
                    }
                    if let FormalVerdict::Cex(c) = &v.verdict {
                        self.cex.insert(v.property_id.clone(), c.clone());
                        cexes.push(v.property_id.clone());
                    }
                }
                for id in cexes {
                    tasks.push(self.push_task(Stream::Verification, TaskKind::FixCex, vec![id.to_string()]));
                }
            }
            RunEvent::CoverageReported { snapshot, .. } => {
                ensure!(phase == Phase::Execution, "tools run in execution");
                ensure!(snapshot.is_valid(), "coverage outside [0, 100]");
                let expected = snapshot
                    .code_pct
                    .min(snapshot.assertion_pct)
                    .min(snapshot.functional_pct);
                ensure!(
                    snapshot.consolidated_pct == expected,
                    "consolidated coverage is not the minimum"
                );
                *self.tool_invocations.entry(ToolKind::Coverage).or_default() += 1;
                let mut snap = snapshot.clone();
                snap.unreachable_waived = snap
                    .uncovered
                    .iter()
                    .filter(|l| self.waivers.contains_key(*l))
                    .cloned()
                    .collect();
                let short = !snap.meets(self.coverage_target()) && !snap.gap_fully_waived();
                self.coverage = Some(snap);
                if short {
                    tasks.push(self.push_task(Stream::Verification, TaskKind::AddCoverageProperties, vec![]));
                }
            }
            RunEvent::DesignCheckPassed { module, revision } => {
                ensure!(phase == Phase::Execution, "design checks run in execution");
                let lint = self.current_lint(module);
                ensure!(
                    self.artifacts.get(module).map(|a| a.revision) == Some(*revision)
                        && lint.is_some_and(|l| l.blocking() == 0),
                    "`{module}` r{revision} is not lint clean"
                );
                self.design_checked.insert(module.clone(), *revision);
            }
            RunEvent::StreamCompleted { stream } => {
                ensure!(phase == Phase::Execution, "streams complete in execution");
                ensure!(
                    !self.streams_completed.contains(stream),
                    "{stream:?} stream already completed"
                );
                if *stream == Stream::Design {
                    let all_checked = self.modules.iter().all(|m| {
                        self.artifacts
                            .get(m)
                            .map(|a| a.revision)
                            .is_some_and(|r| self.design_checked.get(m) == Some(&r))
                    });
                    ensure!(all_checked, "some module has not passed its checks");
                    self.snapshot_design();
                } else {
                    self.snapshot_verification();
                }
                self.streams_completed.insert(*stream);
            }
            RunEvent::LoopRound { name, round, .. } => {
                ensure!(phase == Phase::Execution, "loops run in execution");
                ensure!(*round >= 1, "rounds count from 1");
                self.loop_rounds.insert(name.clone(), *round);
            }
            RunEvent::TicketOpened { ticket } => {
                ensure!(
                    !blocked || ticket.trigger == Trigger::StepBudget,
                    "run is blocked on a ticket"
                );
                let expected = crate::hitl::open_ticket(
                    self,
                    ticket.trigger,
                    &ticket.source,
                    ticket.stream,
                    ticket.transcript_span,
                    ticket.payload_refs.clone(),
                )
                .map_err(|e| illegal(e.to_string()))?;
                ensure!(&expected == ticket, "ticket does not match the run state");
                self.tickets.push(ticket.clone());
                self.phase = Phase::BlockedHitl;
                match ticket.stream {
                    Stream::Design => self.snapshot_design(),
                    Stream::Verification => self.snapshot_verification(),
                }
            }
            RunEvent::ResolutionSubmitted { ticket_id, resolution } => {
                let Some(ticket) = self.ticket(ticket_id) else {
                    return Err(illegal(format!("unknown ticket {ticket_id}")));
                };
                ensure!(ticket.status.is_pending(), "ticket {ticket_id} is closed");
                ensure!(
                    !self.pending_resolutions.contains_key(ticket_id),
                    "ticket {ticket_id} already has a resolution"
                );
                ensure!(
                    ticket.trigger != Trigger::StepBudget || resolution.kind() == ResolutionKind::Abort,
                    "step-budget tickets only accept abort"
                );
                if let Some(t) = self.tickets.iter_mut().find(|t| &t.ticket_id == ticket_id) {
                    t.status = TicketStatus::Resolved;
                }
                self.pending_resolutions.insert(ticket_id.clone(), resolution.clone());
            }
            RunEvent::ResolutionApplied { ticket_id } => {
                ensure!(blocked, "nothing is blocked");
                let Some(resolution) = self.pending_resolutions.get(ticket_id).cloned() else {
                    return Err(illegal(format!("no submitted resolution for {ticket_id}")));
                };
                let ticket = self
                    .ticket(ticket_id)
                    .cloned()
                    .expect("pending resolution has a ticket");
                let mut next = self.clone();
                apply_action(&mut next, &ticket, &resolution).map_err(|e| illegal(e.to_string()))?;
                *self = next;
                self.pending_resolutions.remove(ticket_id);
                *self.metrics.hitl_minutes.entry(ticket.stream).or_default() += resolution.effort_minutes;
                self.resolutions.insert(ticket_id.clone(), resolution);
                if self.phase == Phase::Aborted {
                    self.release_tickets();
                } else if self.open_tickets().next().is_none() {
                    self.phase = ticket.resume_phase;
                }
            }
            RunEvent::SignedOff { report } => {
                ensure!(phase == Phase::Execution, "sign-off happens in execution");
                let expected = sign_off(self).map_err(|e| illegal(e.to_string()))?;
                ensure!(&expected == report, "report does not match the run state");
                self.signoff = Some(report.clone());
                self.phase = Phase::SignedOff;
            }
            RunEvent::Aborted { reason } => {
                self.phase = Phase::Aborted;
                self.abort_reason = Some(reason.clone());
                self.release_tickets();
            }
        }

        self.last_seq += 1;
        self.step_count += 1;
        let payload = Digest::of_bytes(canonical_json(event).as_bytes());
        self.transcript_digest = self.transcript_digest.chain(&payload);
        Ok(tasks)
    }
}
