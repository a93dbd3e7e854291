//! Run lifecycle: the event-sourced state machine, task dispatch, the run
//! executor, and sign-off.

mod definition;
mod events;
mod executor;
mod harness;
mod signoff;
mod state;

use crate::model::{module_name_for, Microarchitecture, Stream, VerificationPlan};

pub use definition::{RoleBinding, WorkflowDefinition, WORKFLOW_VERSION};
pub use events::{RunEvent, TaskDescriptor, TaskKind};
pub use executor::{ExecError, Executor, ExternalReviewer, Reviewer, ReviewerAnswer, RunHandle, RunOutcome, RunSetup};
pub use harness::{check_totality, run_local, LocalRun, ScriptedResolver};
pub use signoff::{
    gate_failures, sign_off, CoverageException, CoverageResults, FinalArtifact, GateFailed, GateFailure, HitlSummary,
    SignOffReport,
};
pub use state::{
    advance_run, llm_key, DeliberationRecord, DesignSnapshot, IllegalTransition, LintRecord, MetricsAccumulator,
    ReferenceRecord, RunState, VerificationSnapshot,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DispatchError {
    #[error("the {0:?} plan is empty")]
    EmptyPlan(Stream),
}

/// Splits the accepted plans into per-stream task lists: one block task per
/// datapath component, one property task per vPlan entry. Ids are numbered
/// across both lists so every task id is unique.
pub fn dispatch_tasks(
    arch: &Microarchitecture,
    plan: &VerificationPlan,
) -> Result<(Vec<TaskDescriptor>, Vec<TaskDescriptor>), DispatchError> {
    if arch.datapath_components.is_empty() {
        return Err(DispatchError::EmptyPlan(Stream::Design));
    }
    if plan.entries.is_empty() {
        return Err(DispatchError::EmptyPlan(Stream::Verification));
    }
    let design: Vec<TaskDescriptor> = arch
        .datapath_components
        .iter()
        .enumerate()
        .map(|(i, c)| TaskDescriptor {
            task_id: format!("{}-{}", TaskKind::GenerateBlock.as_str(), i + 1),
            stream: Stream::Design,
            kind: TaskKind::GenerateBlock,
            trigger_seq: None,
            refs: vec![module_name_for(&c.name), c.role.clone()],
        })
        .collect();
    let offset = design.len();
    let verification = plan
        .entries
        .iter()
        .enumerate()
        .map(|(j, e)| TaskDescriptor {
            task_id: format!("{}-{}", TaskKind::GenerateProperties.as_str(), offset + j + 1),
            stream: Stream::Verification,
            kind: TaskKind::GenerateProperties,
            trigger_seq: None,
            refs: vec![e.entry_id.clone()],
        })
        .collect();
    Ok((design, verification))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DatapathComponent, PropertyType, ResetStrategy, VPlanEntry};
    use std::collections::{BTreeMap, BTreeSet};

    fn arch(names: &[&str]) -> Microarchitecture {
        Microarchitecture {
            datapath_components: names
                .iter()
                .map(|n| DatapathComponent {
                    name: n.to_string(),
                    role: format!("{n} logic"),
                })
                .collect(),
            control_fsms: vec![],
            reset_strategy: ResetStrategy::SyncActiveHigh,
            timing_constraints: vec![],
        }
    }

    fn plan(ids: &[&str]) -> VerificationPlan {
        VerificationPlan {
            entries: ids
                .iter()
                .map(|id| VPlanEntry {
                    entry_id: id.to_string(),
                    property_type: PropertyType::Safety,
                    intent: "x".into(),
                    target_signals: vec![],
                })
                .collect(),
            coverage_goals: BTreeMap::new(),
        }
    }

    #[test]
    fn ecc_dispatch_has_two_design_tasks() {
        let (design, verification) =
            dispatch_tasks(&arch(&["Encoder", "Decoder"]), &plan(&["p1", "p2", "p3"])).unwrap();
        assert_eq!(design.len(), 2);
        assert_eq!(verification.len(), 3);
        assert!(design
            .iter()
            .all(|t| t.stream == Stream::Design && t.kind == TaskKind::GenerateBlock));
        let ids: BTreeSet<&str> = design.iter().chain(&verification).map(|t| t.task_id.as_str()).collect();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn single_entry_plan() {
        let (_, verification) = dispatch_tasks(&arch(&["core"]), &plan(&["p1"])).unwrap();
        assert_eq!(verification.len(), 1);
        assert_eq!(verification[0].refs, vec!["p1".to_string()]);
    }

    #[test]
    fn empty_plans_rejected() {
        assert_eq!(
            dispatch_tasks(&arch(&["core"]), &plan(&[])),
            Err(DispatchError::EmptyPlan(Stream::Verification))
        );
        assert_eq!(
            dispatch_tasks(&arch(&[]), &plan(&["p1"])),
            Err(DispatchError::EmptyPlan(Stream::Design))
        );
    }
}
