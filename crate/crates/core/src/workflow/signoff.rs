use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::RunState;
use crate::model::{PropertyId, PropertyStatus, RunId, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResults {
    pub code_pct: f64,
    pub assertion_pct: f64,
    pub functional_pct: f64,
    pub consolidated_pct: f64,
    pub target_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageException {
    pub location: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalArtifact {
    pub module: String,
    pub revision: u32,
    pub human_patched: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitlSummary {
    pub interventions: u32,
    pub total_minutes: u32,
    pub rtl_minutes: u32,
    pub formal_minutes: u32,
}

/// Written to `runs/<run_id>/signoff.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignOffReport {
    pub run_id: RunId,
    pub design_id: String,
    pub proven_properties: Vec<PropertyId>,
    pub waived_properties: Vec<PropertyId>,
    pub coverage: CoverageResults,
    pub exceptions: Vec<CoverageException>,
    pub artifacts: Vec<FinalArtifact>,
    pub hitl: HitlSummary,
}

/// One unmet sign-off condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "kebab-case")]
pub enum GateFailure {
    MissingArtifact { module: String },
    UnlintedArtifact { module: String, revision: u32 },
    BlockingLint { module: String, count: usize },
    NoProperties,
    OpenCex { property_id: PropertyId },
    UncheckedProperty { property_id: PropertyId },
    PropertyToolError { property_id: PropertyId },
    NoCoverage,
    CoverageBelowTarget { consolidated_pct: f64, target_pct: f64 },
    OpenTickets { count: usize },
    NotRunning,
}

impl GateFailure {
    pub fn code(&self) -> &'static str {
        match self {
            GateFailure::MissingArtifact { .. } => "missing-artifact",
            GateFailure::UnlintedArtifact { .. } => "unlinted-artifact",
            GateFailure::BlockingLint { .. } => "blocking-lint",
            GateFailure::NoProperties => "no-properties",
            GateFailure::OpenCex { .. } => "open-cex",
            GateFailure::UncheckedProperty { .. } => "unchecked-property",
            GateFailure::PropertyToolError { .. } => "property-tool-error",
            GateFailure::NoCoverage => "no-coverage",
            GateFailure::CoverageBelowTarget { .. } => "coverage-below-target",
            GateFailure::OpenTickets { .. } => "open-tickets",
            GateFailure::NotRunning => "not-running",
        }
    }
}

impl fmt::Display for GateFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateFailure::MissingArtifact { module } => write!(f, "no RTL for `{module}`"),
            GateFailure::UnlintedArtifact { module, revision } => write!(f, "`{module}` r{revision} was never linted"),
            GateFailure::BlockingLint { module, count } => {
                write!(f, "`{module}` has {count} fatal/error lint findings")
            }
            GateFailure::NoProperties => f.write_str("no properties"),
            GateFailure::OpenCex { property_id } => write!(f, "`{property_id}` has an open counterexample"),
            GateFailure::UncheckedProperty { property_id } => write!(f, "`{property_id}` is unchecked"),
            GateFailure::PropertyToolError { property_id } => write!(f, "`{property_id}` ended in a tool error"),
            GateFailure::NoCoverage => f.write_str("no coverage report"),
            GateFailure::CoverageBelowTarget {
                consolidated_pct,
                target_pct,
            } => write!(f, "coverage {consolidated_pct}% is below {target_pct}% and not waived"),
            GateFailure::OpenTickets { count } => write!(f, "{count} escalation ticket(s) still open"),
            GateFailure::NotRunning => f.write_str("run is not in the execution phase"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("sign-off gate failed: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct GateFailed(pub Vec<GateFailure>);

impl GateFailed {
    pub fn codes(&self) -> Vec<&'static str> {
        self.0.iter().map(GateFailure::code).collect()
    }
}

/// Every unmet gate condition, in a stable order.
pub fn gate_failures(state: &RunState) -> Vec<GateFailure> {
    let mut out = Vec::new();
    if state.phase.is_terminal() {
        out.push(GateFailure::NotRunning);
    }
    for module in &state.modules {
        let Some(artifact) = state.artifacts.get(module) else {
            out.push(GateFailure::MissingArtifact { module: module.clone() });
            continue;
        };
        match state.lint.get(module).filter(|l| l.revision == artifact.revision) {
            None => out.push(GateFailure::UnlintedArtifact {
                module: module.clone(),
                revision: artifact.revision,
            }),
            Some(lint) => {
                let count = lint.findings.iter().filter(|f| f.severity.blocks_signoff()).count();
                if count > 0 {
                    out.push(GateFailure::BlockingLint {
                        module: module.clone(),
                        count,
                    });
                }
            }
        }
    }
    if state.properties.is_empty() {
        out.push(GateFailure::NoProperties);
    }
    for p in &state.properties {
        let property_id = p.property_id.clone();
        match p.status {
            PropertyStatus::Proven | PropertyStatus::Waived => {}
            PropertyStatus::Cex => out.push(GateFailure::OpenCex { property_id }),
            PropertyStatus::Unchecked => out.push(GateFailure::UncheckedProperty { property_id }),
            PropertyStatus::ToolError => out.push(GateFailure::PropertyToolError { property_id }),
        }
    }
    match &state.coverage {
        None => out.push(GateFailure::NoCoverage),
        Some(cov) => {
            let target = state.coverage_target();
            if !cov.meets(target) && !cov.gap_fully_waived() {
                out.push(GateFailure::CoverageBelowTarget {
                    consolidated_pct: cov.consolidated_pct,
                    target_pct: target,
                });
            }
        }
    }
    let open = state.tickets.iter().filter(|t| t.status.is_pending()).count();
    if open > 0 {
        out.push(GateFailure::OpenTickets { count: open });
    }
    out
}

/// Checks the gate and builds the report. Recording it (which moves the run
/// to signed-off) is the caller's job.
pub fn sign_off(state: &RunState) -> Result<SignOffReport, GateFailed> {
    let failures = gate_failures(state);
    if !failures.is_empty() {
        return Err(GateFailed(failures));
    }
    let cov = state.coverage.as_ref().expect("gate checked coverage");
    let ids = |status: PropertyStatus| -> Vec<PropertyId> {
        state
            .properties
            .iter()
            .filter(|p| p.status == status)
            .map(|p| p.property_id.clone())
            .collect()
    };
    let minutes: BTreeMap<Stream, u32> = state.metrics.hitl_minutes.clone();
    let rtl_minutes = minutes.get(&Stream::Design).copied().unwrap_or(0);
    let formal_minutes = minutes.get(&Stream::Verification).copied().unwrap_or(0);
    Ok(SignOffReport {
        run_id: state.run_id.clone(),
        design_id: state.design_id().to_string(),
        proven_properties: ids(PropertyStatus::Proven),
        waived_properties: ids(PropertyStatus::Waived),
        coverage: CoverageResults {
            code_pct: cov.code_pct,
            assertion_pct: cov.assertion_pct,
            functional_pct: cov.functional_pct,
            consolidated_pct: cov.consolidated_pct,
            target_pct: state.coverage_target(),
        },
        exceptions: cov
            .unreachable_waived
            .iter()
            .map(|loc| CoverageException {
                location: loc.clone(),
                reason: state.waivers.get(loc).cloned().unwrap_or_default(),
            })
            .collect(),
        artifacts: state
            .modules
            .iter()
            .filter_map(|m| state.artifacts.get(m))
            .map(|a| FinalArtifact {
                module: a.module_name.clone(),
                revision: a.revision,
                human_patched: a.provenance == crate::model::ArtifactProvenance::HumanPatched,
            })
            .collect(),
        hitl: HitlSummary {
            interventions: state.resolutions.len() as u32,
            total_minutes: rtl_minutes + formal_minutes,
            rtl_minutes,
            formal_minutes,
        },
    })
}
