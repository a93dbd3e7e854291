use serde::{Deserialize, Serialize};

use crate::agents::DeliberationResult;
use crate::bus::{AgentMessage, Granularity, Topic, CHAT_MANAGER};
use crate::hitl::{EscalationTicket, Resolution};
use crate::model::{
    AgentId, CoverageSnapshot, DesignSpecification, Digest, LintFinding, Microarchitecture, Phase, PropertyId,
    RtlArtifact, RunConfig, RunId, Stream, SvaProperty, TicketId, VerificationPlan,
};
use crate::tooling::{FormalResult, ToolKind};

use super::signoff::SignOffReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    GenerateBlock,
    GenerateProperties,
    FixLint,
    FixCex,
    AddCoverageProperties,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::GenerateBlock => "generate-block",
            TaskKind::GenerateProperties => "generate-properties",
            TaskKind::FixLint => "fix-lint",
            TaskKind::FixCex => "fix-cex",
            TaskKind::AddCoverageProperties => "add-coverage-properties",
        }
    }
}

/// A unit of work for one stream. Fix tasks name the report event
/// (`trigger_seq`) that caused them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task_id: String,
    pub stream: Stream,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_seq: Option<u64>,
    #[serde(default)]
    pub refs: Vec<String>,
}

/// Everything that can happen in a run. The event log is a sequence of
/// these; [`super::RunState::apply`] folds them into the run state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum RunEvent {
    RunCreated {
        run_id: RunId,
        config: RunConfig,
        spec: DesignSpecification,
        definition_hash: Digest,
        #[serde(default)]
        placeholder_markers: Vec<String>,
    },
    PhaseChanged {
        to: Phase,
    },
    FloorOpened {
        participants: Vec<AgentId>,
    },
    FloorClosed,
    Chat(AgentMessage),
    MicroarchitectureAccepted {
        microarchitecture: Microarchitecture,
    },
    VerificationPlanAccepted {
        vplan: VerificationPlan,
    },
    TasksDispatched {
        design: Vec<TaskDescriptor>,
        verification: Vec<TaskDescriptor>,
    },
    DeliberationConcluded {
        source: String,
        result: DeliberationResult,
        iterations: u32,
    },
    ArtifactCommitted {
        artifact: RtlArtifact,
    },
    PropertiesCommitted {
        properties: Vec<SvaProperty>,
    },
    PropertiesRetracted {
        property_ids: Vec<PropertyId>,
    },
    PropertyRevised {
        property_id: PropertyId,
        body: String,
    },
    /// The RTL under a counterexample changed; the property is rechecked.
    PropertyReopened {
        property_id: PropertyId,
    },
    LintReported {
        module: String,
        revision: u32,
        findings: Vec<LintFinding>,
        digest: Digest,
    },
    ReferenceChecked {
        module: String,
        revision: u32,
        pass: Option<bool>,
    },
    FormalReported {
        result: FormalResult,
        digest: Digest,
    },
    CoverageReported {
        snapshot: CoverageSnapshot,
        digest: Digest,
    },
    DesignCheckPassed {
        module: String,
        revision: u32,
    },
    StreamCompleted {
        stream: Stream,
    },
    LoopRound {
        name: String,
        round: u32,
        fruitless: bool,
    },
    TicketOpened {
        ticket: EscalationTicket,
    },
    ResolutionSubmitted {
        ticket_id: TicketId,
        resolution: Resolution,
    },
    ResolutionApplied {
        ticket_id: TicketId,
    },
    SignedOff {
        report: SignOffReport,
    },
    Aborted {
        reason: String,
    },
    DeadLetter {
        message: AgentMessage,
    },
    ToolFailure {
        kind: ToolKind,
        error: String,
    },
}

impl RunEvent {
    pub fn granularity(&self) -> Granularity {
        match self {
            RunEvent::Chat(_) => Granularity::Chat,
            RunEvent::LintReported { .. }
            | RunEvent::ReferenceChecked { .. }
            | RunEvent::FormalReported { .. }
            | RunEvent::CoverageReported { .. } => Granularity::Tool,
            RunEvent::DeadLetter { .. } | RunEvent::ToolFailure { .. } => Granularity::Error,
            _ => Granularity::Lifecycle,
        }
    }

    /// Who records this event and on which topic.
    pub fn origin(&self, run_id: &RunId) -> (AgentId, Topic) {
        match self {
            RunEvent::Chat(msg) | RunEvent::DeadLetter { message: msg } => (msg.sender.clone(), msg.topic.clone()),
            RunEvent::LintReported { .. }
            | RunEvent::ReferenceChecked { .. }
            | RunEvent::FormalReported { .. }
            | RunEvent::CoverageReported { .. }
            | RunEvent::ToolFailure { .. } => (AgentId::from("code-executor"), Topic::tool(run_id)),
            RunEvent::TicketOpened { .. }
            | RunEvent::ResolutionSubmitted { .. }
            | RunEvent::ResolutionApplied { .. } => (AgentId::from("conversable"), Topic::hitl(run_id)),
            _ => (AgentId::from(CHAT_MANAGER), Topic::groupchat(run_id)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RunEvent::RunCreated { .. } => "run-created",
            RunEvent::PhaseChanged { .. } => "phase-changed",
            RunEvent::FloorOpened { .. } => "floor-opened",
            RunEvent::FloorClosed => "floor-closed",
            RunEvent::Chat(_) => "chat",
            RunEvent::MicroarchitectureAccepted { .. } => "microarchitecture-accepted",
            RunEvent::VerificationPlanAccepted { .. } => "verification-plan-accepted",
            RunEvent::TasksDispatched { .. } => "tasks-dispatched",
            RunEvent::DeliberationConcluded { .. } => "deliberation-concluded",
            RunEvent::ArtifactCommitted { .. } => "artifact-committed",
            RunEvent::PropertiesCommitted { .. } => "properties-committed",
            RunEvent::PropertiesRetracted { .. } => "properties-retracted",
            RunEvent::PropertyRevised { .. } => "property-revised",
            RunEvent::PropertyReopened { .. } => "property-reopened",
            RunEvent::LintReported { .. } => "lint-reported",
            RunEvent::ReferenceChecked { .. } => "reference-checked",
            RunEvent::FormalReported { .. } => "formal-reported",
            RunEvent::CoverageReported { .. } => "coverage-reported",
            RunEvent::DesignCheckPassed { .. } => "design-check-passed",
            RunEvent::StreamCompleted { .. } => "stream-completed",
            RunEvent::LoopRound { .. } => "loop-round",
            RunEvent::TicketOpened { .. } => "ticket-opened",
            RunEvent::ResolutionSubmitted { .. } => "resolution-submitted",
            RunEvent::ResolutionApplied { .. } => "resolution-applied",
            RunEvent::SignedOff { .. } => "signed-off",
            RunEvent::Aborted { .. } => "aborted",
            RunEvent::DeadLetter { .. } => "dead-letter",
            RunEvent::ToolFailure { .. } => "tool-failure",
        }
    }
}
