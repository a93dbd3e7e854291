//! EDA tool adapters, report parsers, and the scenario-driven fake toolchain.

mod fake;
mod reports;
mod scenario;
mod subprocess;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::llm::TemperatureBucket;
use crate::model::{
    CexRecord, CoverageSnapshot, Digest, LintFinding, PropertyId, PropertyStatus, RtlArtifact, SvaProperty,
};

pub use fake::{FakeAdapter, FakeReference};
pub use reports::{
    categorize_lint, category_for_rule, parse_coverage_report, parse_formal_report, parse_lint_report,
    render_coverage_report, render_formal_report, render_lint_report, FormalReport, LintSummary,
};
pub use scenario::{
    load_scenario, parse_scenario, CoverageRule, ExpectedRow, ExpectedTemperatureRow, FormalRule, HitlScript, LintRule,
    ReferenceRule, Scenario, ScenarioError, Schedule, ScriptedResolution, SCENARIO_SCHEMA,
};
pub use subprocess::SubprocessAdapter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToolKind {
    Lint,
    Formal,
    Coverage,
}

impl ToolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolKind::Lint => "lint",
            ToolKind::Formal => "formal",
            ToolKind::Coverage => "coverage",
        }
    }

    /// Report dialect spoken by the built-in parsers for this kind.
    pub fn dialect(self) -> &'static str {
        match self {
            ToolKind::Lint => "lint-v1",
            ToolKind::Formal => "formal-v1",
            ToolKind::Coverage => "coverage-v1",
        }
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How to run one external tool. `command` is an argv template; `{input}`,
/// `{report}` and `{workdir}` are substituted verbatim, without a shell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolAdapterDescriptor {
    pub adapter_id: String,
    pub kind: ToolKind,
    pub command: Vec<String>,
    pub report_dialect: String,
}

impl ToolAdapterDescriptor {
    pub fn validate(&self) -> Result<(), ToolError> {
        let bad = |why: &str| Err(ToolError::BadDescriptor(format!("{}: {why}", self.adapter_id)));
        if self.adapter_id.trim().is_empty() {
            return bad("empty adapter id");
        }
        if self.command.is_empty() {
            return bad("empty command");
        }
        if !self.command.iter().any(|arg| arg.contains("{report}")) {
            return bad("command template has no {report} placeholder");
        }
        if self.report_dialect != self.kind.dialect() {
            return bad(&format!(
                "dialect `{}` cannot parse {} reports",
                self.report_dialect, self.kind
            ));
        }
        Ok(())
    }
}

/// Contents of `adapters.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub adapters: Vec<ToolAdapterDescriptor>,
}

impl AdapterConfig {
    pub fn parse(text: &str) -> Result<Self, ToolError> {
        let cfg: AdapterConfig = serde_json::from_str(text).map_err(|e| ToolError::BadDescriptor(e.to_string()))?;
        let mut ids = BTreeSet::new();
        for desc in &cfg.adapters {
            desc.validate()?;
            if !ids.insert(desc.adapter_id.as_str()) {
                return Err(ToolError::BadDescriptor(format!(
                    "duplicate adapter id `{}`",
                    desc.adapter_id
                )));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ToolError> {
        let text = fs::read_to_string(path).map_err(|e| ToolError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn for_kind(&self, kind: ToolKind) -> Option<&ToolAdapterDescriptor> {
        self.adapters.iter().find(|a| a.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("tool `{adapter}` crashed (exit code {code:?}): {detail}")]
    ToolCrash {
        adapter: String,
        code: Option<i32>,
        detail: String,
    },
    #[error("unparseable report at line {line}: {reason}")]
    UnparseableReport { line: usize, reason: String },
    #[error("no properties to check")]
    EmptyPropertySet,
    #[error("adapter kind is {got}, expected {expected}")]
    WrongKind { expected: ToolKind, got: ToolKind },
    #[error("formal verdicts do not match the submitted properties: {0}")]
    VerdictMismatch(String),
    #[error("counterexample for `{0}` is stale")]
    StaleCex(PropertyId),
    #[error("fault schedule has no outcome for {0}")]
    ScheduleMiss(String),
    #[error("bad adapter descriptor: {0}")]
    BadDescriptor(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// A property as submitted to a formal or coverage run.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyInput {
    pub property: SvaProperty,
    /// 1 for the first body, +1 for every revision since.
    pub revision: u32,
}

/// Everything an adapter may need for one call.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub kind: ToolKind,
    pub design_id: String,
    pub bucket: TemperatureBucket,
    /// 1-based count of invocations of this kind within the run.
    pub index: u32,
    pub artifacts: Vec<RtlArtifact>,
    pub properties: Vec<PropertyInput>,
}

pub trait ToolAdapter: Send + Sync {
    fn kind(&self) -> ToolKind;
    /// Runs the tool and returns the report text.
    fn invoke(&self, inv: &Invocation) -> Result<String, ToolError>;
}

/// Functional check against a reference model. `Ok(None)` means no reference
/// is available, which counts as a pass.
pub trait ReferenceProbe: Send + Sync {
    fn check(&self, artifact: &RtlArtifact, bucket: TemperatureBucket) -> Result<Option<bool>, ToolError>;
}

/// Probe for real toolchains that have no reference model.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoReference;

impl ReferenceProbe for NoReference {
    fn check(&self, _: &RtlArtifact, _: TemperatureBucket) -> Result<Option<bool>, ToolError> {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum FormalVerdict {
    Proven,
    Cex(CexRecord),
    ToolError { message: String },
}

impl FormalVerdict {
    pub fn status(&self) -> PropertyStatus {
        match self {
            FormalVerdict::Proven => PropertyStatus::Proven,
            FormalVerdict::Cex(_) => PropertyStatus::Cex,
            FormalVerdict::ToolError { .. } => PropertyStatus::ToolError,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyVerdict {
    pub property_id: PropertyId,
    pub verdict: FormalVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormalResult {
    pub verdicts: Vec<PropertyVerdict>,
    pub tool_wall_ms: u64,
}

impl FormalResult {
    pub fn cex_count(&self) -> usize {
        self.verdicts
            .iter()
            .filter(|v| matches!(v.verdict, FormalVerdict::Cex(_)))
            .count()
    }
}

fn expect_kind(adapter: &dyn ToolAdapter, expected: ToolKind) -> Result<(), ToolError> {
    if adapter.kind() != expected {
        return Err(ToolError::WrongKind {
            expected,
            got: adapter.kind(),
        });
    }
    Ok(())
}

/// Lint findings plus the digest of the report they were parsed from.
#[derive(Debug, Clone, PartialEq)]
pub struct LintOutcome {
    pub findings: Vec<LintFinding>,
    pub digest: Digest,
}

pub fn run_lint(adapter: &dyn ToolAdapter, inv: &Invocation) -> Result<LintOutcome, ToolError> {
    expect_kind(adapter, ToolKind::Lint)?;
    let report = adapter.invoke(inv)?;
    Ok(LintOutcome {
        findings: parse_lint_report(&report)?,
        digest: Digest::of_bytes(report.as_bytes()),
    })
}

/// Runs formal and checks that exactly one verdict came back per property.
pub fn run_formal(adapter: &dyn ToolAdapter, inv: &Invocation) -> Result<(FormalResult, Digest), ToolError> {
    expect_kind(adapter, ToolKind::Formal)?;
    if inv.properties.is_empty() {
        return Err(ToolError::EmptyPropertySet);
    }
    let report = adapter.invoke(inv)?;
    let parsed = parse_formal_report(&report)?;
    let submitted: BTreeSet<&PropertyId> = inv.properties.iter().map(|p| &p.property.property_id).collect();
    let returned: Vec<&PropertyId> = parsed.verdicts.iter().map(|v| &v.property_id).collect();
    let unique: BTreeSet<&PropertyId> = returned.iter().copied().collect();
    if unique.len() != returned.len() || unique != submitted {
        let missing: Vec<String> = submitted.difference(&unique).map(|p| p.to_string()).collect();
        let extra: Vec<String> = unique.difference(&submitted).map(|p| p.to_string()).collect();
        return Err(ToolError::VerdictMismatch(format!(
            "missing {missing:?}, unexpected {extra:?}"
        )));
    }
    let result = FormalResult {
        verdicts: parsed.verdicts,
        tool_wall_ms: parsed.wall_ms,
    };
    Ok((result, Digest::of_bytes(report.as_bytes())))
}

pub fn run_coverage(adapter: &dyn ToolAdapter, inv: &Invocation) -> Result<(CoverageSnapshot, Digest), ToolError> {
    expect_kind(adapter, ToolKind::Coverage)?;
    let report = adapter.invoke(inv)?;
    Ok((parse_coverage_report(&report)?, Digest::of_bytes(report.as_bytes())))
}

/// Every tool a run uses, one adapter per kind.
pub struct Toolchain {
    pub lint: Box<dyn ToolAdapter>,
    pub formal: Box<dyn ToolAdapter>,
    pub coverage: Box<dyn ToolAdapter>,
    pub reference: Box<dyn ReferenceProbe>,
}

impl Toolchain {
    /// The deterministic fake toolchain driven by a scenario's schedule.
    pub fn fake(schedule: &Schedule) -> Self {
        Self {
            lint: Box::new(FakeAdapter::new(ToolKind::Lint, schedule.clone())),
            formal: Box::new(FakeAdapter::new(ToolKind::Formal, schedule.clone())),
            coverage: Box::new(FakeAdapter::new(ToolKind::Coverage, schedule.clone())),
            reference: Box::new(FakeReference::new(schedule.clone())),
        }
    }

    /// Subprocess adapters from `adapters.json`; no reference model.
    pub fn subprocess(config: &AdapterConfig, workdir: &Path) -> Result<Self, ToolError> {
        let pick = |kind: ToolKind| -> Result<Box<dyn ToolAdapter>, ToolError> {
            let desc = config
                .for_kind(kind)
                .ok_or_else(|| ToolError::BadDescriptor(format!("no {kind} adapter configured")))?;
            Ok(Box::new(SubprocessAdapter::new(desc.clone(), workdir.to_path_buf())?))
        };
        Ok(Self {
            lint: pick(ToolKind::Lint)?,
            formal: pick(ToolKind::Formal)?,
            coverage: pick(ToolKind::Coverage)?,
            reference: Box::new(NoReference),
        })
    }
}

/// Builds the fix task payload for one counterexample.
pub fn analyze_cex(cex: &CexRecord, properties: &[SvaProperty]) -> Result<CexAnalysis, ToolError> {
    let prop = properties
        .iter()
        .find(|p| p.property_id == cex.property_id)
        .filter(|p| p.status == PropertyStatus::Cex)
        .ok_or_else(|| ToolError::StaleCex(cex.property_id.clone()))?;
    Ok(CexAnalysis {
        property_id: prop.property_id.clone(),
        body_text: prop.body_text.clone(),
        trace_summary: cex.trace_summary.clone(),
        depth: cex.depth,
        failing_signals: cex.failing_signals.clone(),
    })
}

/// Context handed to the agent fixing a counterexample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CexAnalysis {
    pub property_id: PropertyId,
    pub body_text: String,
    pub trace_summary: String,
    pub depth: u32,
    pub failing_signals: Vec<String>,
}

impl CexAnalysis {
    pub fn prompt_text(&self) -> String {
        format!(
            "property {}: {}\ncounterexample at depth {} on [{}]: {}",
            self.property_id,
            self.body_text,
            self.depth,
            self.failing_signals.join(", "),
            self.trace_summary
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PropertyProvenance;

    fn descriptor(command: &[&str]) -> ToolAdapterDescriptor {
        ToolAdapterDescriptor {
            adapter_id: "spy".into(),
            kind: ToolKind::Lint,
            command: command.iter().map(|s| s.to_string()).collect(),
            report_dialect: "lint-v1".into(),
        }
    }

    #[test]
    fn template_needs_report_placeholder() {
        assert!(descriptor(&["lint", "{input}", "-o", "{report}"]).validate().is_ok());
        assert!(matches!(
            descriptor(&["lint", "{input}"]).validate(),
            Err(ToolError::BadDescriptor(_))
        ));
    }

    #[test]
    fn adapter_ids_unique() {
        let text = r#"{"adapters": [
            {"adapter_id": "a", "kind": "lint", "command": ["x", "{report}"], "report_dialect": "lint-v1"},
            {"adapter_id": "a", "kind": "formal", "command": ["y", "{report}"], "report_dialect": "formal-v1"}
        ]}"#;
        assert!(matches!(AdapterConfig::parse(text), Err(ToolError::BadDescriptor(m)) if m.contains("duplicate")));
    }

    fn property(id: &str, status: PropertyStatus) -> SvaProperty {
        SvaProperty {
            property_id: PropertyId::from(id),
            vplan_entry_id: "p1".into(),
            body_text: "a |-> b".into(),
            status,
            provenance: PropertyProvenance::AgentGenerated,
        }
    }

    #[test]
    fn cex_analysis_quotes_trace() {
        let cex = CexRecord {
            property_id: PropertyId::from("crc.p1.1"),
            trace_summary: "reset released, data_valid high, crc_out stays FFFF".into(),
            depth: 3,
            failing_signals: vec!["crc_out".into()],
        };
        let task = analyze_cex(&cex, &[property("crc.p1.1", PropertyStatus::Cex)]).unwrap();
        assert!(task.prompt_text().contains("depth 3"));
        assert!(task.prompt_text().contains("crc_out stays FFFF"));
        assert_eq!(
            analyze_cex(&cex, &[property("crc.p1.1", PropertyStatus::Proven)]),
            Err(ToolError::StaleCex(PropertyId::from("crc.p1.1")))
        );
    }
}
