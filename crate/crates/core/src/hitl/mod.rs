//! Escalation tickets and human resolutions.
//!
//! Tickets live only in the run's event log. Opening one blocks the run;
//! a submitted resolution is validated against the current state, recorded,
//! and applied by the run executor before the run resumes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{
    validate_specification, ArtifactProvenance, Phase, PropertyId, PropertyProvenance, PropertyStatus, RunId, Stream,
    SvaProperty, TicketId,
};
use crate::workflow::RunState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    DeliberationExhausted,
    ZeroProgressCoverage,
    ToolFailure,
    StepBudget,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::DeliberationExhausted => "deliberation-exhausted",
            Trigger::ZeroProgressCoverage => "zero-progress-coverage",
            Trigger::ToolFailure => "tool-failure",
            Trigger::StepBudget => "step-budget",
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TicketStatus {
    Open,
    InReview,
    Resolved,
    Rejected,
}

impl TicketStatus {
    pub fn is_pending(self) -> bool {
        matches!(self, TicketStatus::Open | TicketStatus::InReview)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationTicket {
    pub ticket_id: TicketId,
    pub run_id: RunId,
    pub trigger: Trigger,
    /// The loop or tool that escalated, e.g. `check:ecc_enc` or `closure`.
    pub source: String,
    pub stream: Stream,
    pub transcript_span: (u64, u64),
    #[serde(default)]
    pub payload_refs: Vec<String>,
    pub status: TicketStatus,
    pub opened_at_seq: u64,
    /// Phase the run returns to once the ticket is resolved.
    pub resume_phase: Phase,
    /// Artifact revisions when the ticket was opened.
    #[serde(default)]
    pub base_revisions: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionKind {
    PatchRtl,
    ReplaceProperties,
    RemoveProperties,
    AddProperties,
    WaiveUnreachable,
    EditSpec,
    Abort,
}

impl ResolutionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResolutionKind::PatchRtl => "patch-rtl",
            ResolutionKind::ReplaceProperties => "replace-properties",
            ResolutionKind::RemoveProperties => "remove-properties",
            ResolutionKind::AddProperties => "add-properties",
            ResolutionKind::WaiveUnreachable => "waive-unreachable",
            ResolutionKind::EditSpec => "edit-spec",
            ResolutionKind::Abort => "abort",
        }
    }
}

impl fmt::Display for ResolutionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A unified diff against `base_revision` of `module`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchRtl {
    pub module: String,
    pub base_revision: u32,
    pub diff: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyEdit {
    pub property_id: PropertyId,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewProperty {
    pub vplan_entry_id: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaceProperties {
    pub properties: Vec<PropertyEdit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoveProperties {
    pub property_ids: Vec<PropertyId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddProperties {
    pub properties: Vec<NewProperty>,
}

/// Coverage locations judged unreachable, plus counterexample properties
/// waived for the same reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaiveUnreachable {
    #[serde(default)]
    pub locations: Vec<String>,
    #[serde(default)]
    pub properties: Vec<PropertyId>,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditSpec {
    pub spec: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Abort {
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum ResolutionAction {
    PatchRtl(PatchRtl),
    ReplaceProperties(ReplaceProperties),
    RemoveProperties(RemoveProperties),
    AddProperties(AddProperties),
    WaiveUnreachable(WaiveUnreachable),
    EditSpec(EditSpec),
    Abort(Abort),
}

impl ResolutionAction {
    pub fn kind(&self) -> ResolutionKind {
        match self {
            ResolutionAction::PatchRtl(_) => ResolutionKind::PatchRtl,
            ResolutionAction::ReplaceProperties(_) => ResolutionKind::ReplaceProperties,
            ResolutionAction::RemoveProperties(_) => ResolutionKind::RemoveProperties,
            ResolutionAction::AddProperties(_) => ResolutionKind::AddProperties,
            ResolutionAction::WaiveUnreachable(_) => ResolutionKind::WaiveUnreachable,
            ResolutionAction::EditSpec(_) => ResolutionKind::EditSpec,
            ResolutionAction::Abort(_) => ResolutionKind::Abort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    #[serde(flatten)]
    pub action: ResolutionAction,
    pub effort_minutes: u32,
    pub reviewer_id: String,
}

/// The resolution request as it arrives over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionBody {
    pub kind: ResolutionKind,
    #[serde(default)]
    pub payload: serde_json::Value,
    #[serde(default)]
    pub effort_minutes: u32,
    #[serde(default)]
    pub reviewer_id: String,
}

impl ResolutionBody {
    /// Typed resolution, or `PayloadShapeMismatch` when the payload does not
    /// fit the kind.
    pub fn to_resolution(&self) -> Result<Resolution, HitlError> {
        let tagged = serde_json::json!({ "kind": self.kind, "payload": self.payload });
        let action: ResolutionAction = serde_json::from_value(tagged)
            .map_err(|e| HitlError::PayloadShapeMismatch(format!("{} payload: {e}", self.kind)))?;
        let shape = |why: &str| Err(HitlError::PayloadShapeMismatch(format!("{}: {why}", self.kind)));
        match &action {
            ResolutionAction::PatchRtl(p) if p.diff.trim().is_empty() => return shape("empty diff"),
            ResolutionAction::PatchRtl(p) => {
                if diffy::Patch::from_str(&p.diff).is_err() {
                    return shape("diff is not a unified diff");
                }
            }
            ResolutionAction::ReplaceProperties(r) if r.properties.is_empty() => return shape("no properties"),
            ResolutionAction::RemoveProperties(r) if r.property_ids.is_empty() => return shape("no property ids"),
            ResolutionAction::AddProperties(a) if a.properties.is_empty() => return shape("no properties"),
            ResolutionAction::AddProperties(a) if a.properties.iter().any(|p| p.body.trim().is_empty()) => {
                return shape("empty property body")
            }
            ResolutionAction::WaiveUnreachable(w) if w.locations.is_empty() && w.properties.is_empty() => {
                return shape("nothing to waive")
            }
            ResolutionAction::EditSpec(e) => {
                if let Err(errs) = validate_specification(&e.spec) {
                    return shape(&errs.to_string());
                }
            }
            _ => {}
        }
        Ok(Resolution {
            action,
            effort_minutes: self.effort_minutes,
            reviewer_id: self.reviewer_id.clone(),
        })
    }

    pub fn validate_shape(&self) -> Result<(), HitlError> {
        self.to_resolution().map(|_| ())
    }
}

impl Resolution {
    pub fn kind(&self) -> ResolutionKind {
        self.action.kind()
    }

    pub fn to_body(&self) -> ResolutionBody {
        let value = serde_json::to_value(&self.action).expect("resolution serializes");
        ResolutionBody {
            kind: self.kind(),
            payload: value.get("payload").cloned().unwrap_or_default(),
            effort_minutes: self.effort_minutes,
            reviewer_id: self.reviewer_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HitlError {
    #[error("a ticket for `{0}` is already open")]
    DuplicateTicket(String),
    #[error("ticket {0} is closed")]
    TicketClosed(TicketId),
    #[error("payload does not match resolution kind: {0}")]
    PayloadShapeMismatch(String),
    #[error("conflicting state: {0}")]
    ConflictingState(String),
    #[error("unknown ticket {0}")]
    UnknownTicket(TicketId),
    #[error("{kind} is not allowed for {trigger} tickets")]
    NotAllowed { trigger: Trigger, kind: ResolutionKind },
    #[error("transcript span ({0}, {1}) is empty")]
    EmptySpan(u64, u64),
}

/// Builds the ticket for an escalation; the caller records it as an event.
pub fn open_ticket(
    state: &RunState,
    trigger: Trigger,
    source: &str,
    stream: Stream,
    span: (u64, u64),
    payload_refs: Vec<String>,
) -> Result<EscalationTicket, HitlError> {
    if span.0 == 0 || span.0 > span.1 {
        return Err(HitlError::EmptySpan(span.0, span.1));
    }
    if state
        .tickets
        .iter()
        .any(|t| t.status.is_pending() && t.source == source)
    {
        return Err(HitlError::DuplicateTicket(source.to_string()));
    }
    let resume_phase = if state.phase == Phase::BlockedHitl {
        state
            .tickets
            .iter()
            .rev()
            .find(|t| t.status.is_pending())
            .map(|t| t.resume_phase)
            .unwrap_or(Phase::Execution)
    } else {
        state.phase
    };
    Ok(EscalationTicket {
        ticket_id: TicketId::new(format!("{}-t{}", state.run_id, state.tickets.len() + 1)),
        run_id: state.run_id.clone(),
        trigger,
        source: source.to_string(),
        stream,
        transcript_span: span,
        payload_refs,
        status: TicketStatus::Open,
        opened_at_seq: state.last_seq + 1,
        resume_phase,
        base_revisions: state.artifacts.iter().map(|(m, a)| (m.clone(), a.revision)).collect(),
    })
}

/// Validates a resolution for an open ticket against the current state.
/// On success the caller records it; nothing is mutated here.
pub fn submit_resolution(
    state: &RunState,
    ticket_id: &TicketId,
    body: &ResolutionBody,
) -> Result<Resolution, HitlError> {
    let ticket = state
        .ticket(ticket_id)
        .ok_or_else(|| HitlError::UnknownTicket(ticket_id.clone()))?;
    if !ticket.status.is_pending() || state.pending_resolutions.contains_key(ticket_id) {
        return Err(HitlError::TicketClosed(ticket_id.clone()));
    }
    let resolution = body.to_resolution()?;
    if ticket.trigger == Trigger::StepBudget && resolution.kind() != ResolutionKind::Abort {
        return Err(HitlError::NotAllowed {
            trigger: ticket.trigger,
            kind: resolution.kind(),
        });
    }
    apply_resolution(state, ticket, &resolution)?;
    Ok(resolution)
}

/// The state after `resolution` takes effect. Pure; the run executor records
/// the application as an event and the state machine calls [`apply_action`].
pub fn apply_resolution(
    state: &RunState,
    ticket: &EscalationTicket,
    resolution: &Resolution,
) -> Result<RunState, HitlError> {
    let mut next = state.clone();
    apply_action(&mut next, ticket, resolution)?;
    Ok(next)
}

pub(crate) fn apply_action(
    state: &mut RunState,
    ticket: &EscalationTicket,
    resolution: &Resolution,
) -> Result<(), HitlError> {
    let conflict = |why: String| Err(HitlError::ConflictingState(why));
    match &resolution.action {
        ResolutionAction::PatchRtl(p) => {
            let Some(current) = state.artifacts.get(&p.module) else {
                return conflict(format!("no artifact for module `{}`", p.module));
            };
            if current.revision != p.base_revision {
                return conflict(format!(
                    "`{}` is at revision {}, patch is against {}",
                    p.module, current.revision, p.base_revision
                ));
            }
            if let Some(base) = ticket.base_revisions.get(&p.module) {
                if *base != current.revision {
                    return conflict(format!("`{}` advanced since the ticket was opened", p.module));
                }
            }
            let patch = diffy::Patch::from_str(&p.diff)
                .map_err(|e| HitlError::PayloadShapeMismatch(format!("patch-rtl: {e}")))?;
            let text = match diffy::apply(&current.source_text, &patch) {
                Ok(text) => text,
                Err(e) => {
                    return conflict(format!(
                        "patch does not apply to `{}` r{}: {e}",
                        p.module, current.revision
                    ))
                }
            };
            if text.trim().is_empty() {
                return conflict("patch leaves an empty module".into());
            }
            let next = current.revised(text, ArtifactProvenance::HumanPatched);
            state.artifacts.insert(p.module.clone(), next);
        }
        ResolutionAction::ReplaceProperties(r) => {
            for edit in &r.properties {
                let Some(prop) = state.properties.iter_mut().find(|p| p.property_id == edit.property_id) else {
                    return conflict(format!("no property `{}`", edit.property_id));
                };
                if prop.status != PropertyStatus::Unchecked && !prop.status.can_transition_to(PropertyStatus::Unchecked)
                {
                    return conflict(format!("property `{}` is {:?}", edit.property_id, prop.status));
                }
                prop.body_text = edit.body.clone();
                prop.status = PropertyStatus::Unchecked;
                prop.provenance = PropertyProvenance::HumanEdited;
                *state.property_revisions.entry(edit.property_id.clone()).or_insert(1) += 1;
                state.cex.remove(&edit.property_id);
            }
        }
        ResolutionAction::RemoveProperties(r) => {
            for id in &r.property_ids {
                let before = state.properties.len();
                state.properties.retain(|p| &p.property_id != id);
                if state.properties.len() == before {
                    return conflict(format!("no property `{id}`"));
                }
                state.cex.remove(id);
                state.property_revisions.remove(id);
            }
        }
        ResolutionAction::AddProperties(a) => {
            for new in &a.properties {
                let known = state
                    .vplan
                    .as_ref()
                    .is_some_and(|v| v.entry(&new.vplan_entry_id).is_some());
                if !known {
                    return conflict(format!("no vPlan entry `{}`", new.vplan_entry_id));
                }
                let n = state.human_counters.entry(new.vplan_entry_id.clone()).or_insert(0);
                *n += 1;
                let property_id = PropertyId::new(format!("{}.h{}", new.vplan_entry_id, n));
                state.property_revisions.insert(property_id.clone(), 1);
                state.properties.push(SvaProperty {
                    property_id,
                    vplan_entry_id: new.vplan_entry_id.clone(),
                    body_text: new.body.clone(),
                    status: PropertyStatus::Unchecked,
                    provenance: PropertyProvenance::HumanAdded,
                });
            }
        }
        ResolutionAction::WaiveUnreachable(w) => {
            if !w.locations.is_empty() {
                let Some(coverage) = state.coverage.as_mut() else {
                    return conflict("no coverage report to waive against".into());
                };
                for loc in &w.locations {
                    if !coverage.uncovered.contains(loc) {
                        return conflict(format!("`{loc}` is not an uncovered location"));
                    }
                    if !coverage.unreachable_waived.contains(loc) {
                        coverage.unreachable_waived.push(loc.clone());
                    }
                    state.waivers.insert(loc.clone(), w.reason.clone());
                }
            }
            for id in &w.properties {
                let Some(prop) = state.properties.iter_mut().find(|p| &p.property_id == id) else {
                    return conflict(format!("no property `{id}`"));
                };
                if !prop.status.can_transition_to(PropertyStatus::Waived) {
                    return conflict(format!("property `{id}` has no counterexample to waive"));
                }
                prop.status = PropertyStatus::Waived;
                state.cex.remove(id);
            }
        }
        ResolutionAction::EditSpec(e) => {
            let spec =
                validate_specification(&e.spec).map_err(|errs| HitlError::PayloadShapeMismatch(errs.to_string()))?;
            if state.spec.as_ref().is_some_and(|s| s.design_id != spec.design_id) {
                return conflict(format!("spec edit changes design_id to `{}`", spec.design_id));
            }
            state.spec = Some(spec);
        }
        ResolutionAction::Abort(a) => {
            state.phase = Phase::Aborted;
            state.abort_reason = Some(if a.reason.is_empty() {
                format!("aborted by {}", resolution.reviewer_id)
            } else {
                a.reason.clone()
            });
        }
    }
    Ok(())
}

/// Which tickets `list_pending` returns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketFilter {
    #[serde(default)]
    pub run_id: Option<RunId>,
    #[serde(default)]
    pub status: Option<TicketStatus>,
}

/// Tickets matching `filter`, ordered by `opened_at_seq` then ticket id.
/// Without a status filter only open and in-review tickets are returned.
pub fn list_pending<'a>(
    tickets: impl IntoIterator<Item = &'a EscalationTicket>,
    filter: &TicketFilter,
) -> Vec<EscalationTicket> {
    let mut out: Vec<EscalationTicket> = tickets
        .into_iter()
        .filter(|t| filter.run_id.as_ref().is_none_or(|r| &t.run_id == r))
        .filter(|t| match filter.status {
            Some(s) => t.status == s,
            None => t.status.is_pending(),
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| (a.opened_at_seq, &a.ticket_id).cmp(&(b.opened_at_seq, &b.ticket_id)));
    out
}
