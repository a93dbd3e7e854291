//! Shared domain types.
//!
//! Every other module builds on the values defined here. They are plain data:
//! immutable once constructed, `Send + Sync`, and serializable in the
//! canonical form used for state hashing (see [`canonical`]).

pub mod canonical;
mod spec_doc;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use canonical::{canonical_hash, canonical_json, Digest};
pub use spec_doc::{parse_specification, render_specification, validate_specification};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Identifier of one end-to-end run.
    RunId
);
string_id!(
    /// Identifier of an escalation ticket, unique across runs.
    TicketId
);
string_id!(PropertyId);
string_id!(BackendId);
string_id!(
    /// A participant in the group chat. Usually the role id, with a numeric
    /// suffix when a role has several instances (`critic-2`).
    AgentId
);

/// Validation failures for specifications and run configuration.
#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "kebab-case")]
pub enum ValidationError {
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("duplicate port `{0}`")]
    DuplicatePort(String),
    #[error("invalid width for port `{0}`")]
    InvalidWidth(String),
    #[error("`{0}` is out of range")]
    TargetOutOfRange(String),
    #[error("`{0}` must not be empty")]
    Empty(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// The complete list of violations found in one validation pass.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} validation error(s): {}", .0.len(), join_errors(.0))]
pub struct ValidationErrors(pub Vec<ValidationError>);

fn join_errors(errors: &[ValidationError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// True when `value` is a finite percentage in `[0, 100]`.
pub fn is_percentage(value: f64) -> bool {
    value.is_finite() && (0.0..=100.0).contains(&value)
}

/// Wildcard match where `*` stands for any (possibly empty) substring.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] != '*' && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|c| *c == '*')
}

/// Rounds to two decimals, the precision coverage tools report at.
pub fn round_pct(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Planning,
    Development,
    Execution,
    BlockedHitl,
    SignedOff,
    Aborted,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Planning => "planning",
            Phase::Development => "development",
            Phase::Execution => "execution",
            Phase::BlockedHitl => "blocked-hitl",
            Phase::SignedOff => "signed-off",
            Phase::Aborted => "aborted",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::SignedOff | Phase::Aborted)
    }

    /// Position in the forward order planning → development → execution → signed-off.
    pub fn rank(self) -> Option<u8> {
        match self {
            Phase::Planning => Some(0),
            Phase::Development => Some(1),
            Phase::Execution => Some(2),
            Phase::SignedOff => Some(3),
            Phase::BlockedHitl | Phase::Aborted => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The two parallel streams of the development and execution phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    Design,
    Verification,
}

// ---------------------------------------------------------------------------
// Specification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PortDirection {
    In,
    Out,
    Inout,
}

impl PortDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            PortDirection::In => "in",
            PortDirection::Out => "out",
            PortDirection::Inout => "inout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortDef {
    pub name: String,
    pub direction: PortDirection,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTarget {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmState {
    pub name: String,
    pub transitions: String,
}

/// Structured input document describing one hardware design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpecification {
    pub design_id: String,
    pub requirements: Vec<String>,
    pub interfaces: Vec<PortDef>,
    pub performance_targets: Vec<PerformanceTarget>,
    pub fsm_details: Vec<FsmState>,
    pub coverage_target_pct: f64,
}

impl DesignSpecification {
    pub fn requirements_text(&self) -> String {
        self.requirements.join("\n\n")
    }

    pub fn interfaces_text(&self) -> String {
        self.interfaces
            .iter()
            .map(|p| format!("{} {} {}", p.name, p.direction.as_str(), p.width))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn performance_text(&self) -> String {
        self.performance_targets
            .iter()
            .map(|t| format!("{} {} {}", t.name, t.value, t.unit).trim_end().to_string())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn fsm_text(&self) -> String {
        self.fsm_details
            .iter()
            .map(|s| format!("{}: {}", s.name, s.transitions))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

// ---------------------------------------------------------------------------
// Planning outputs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResetStrategy {
    SyncActiveHigh,
    SyncActiveLow,
    AsyncActiveHigh,
    AsyncActiveLow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatapathComponent {
    pub name: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFsm {
    pub name: String,
    #[serde(default)]
    pub states: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConstraint {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microarchitecture {
    pub datapath_components: Vec<DatapathComponent>,
    #[serde(default)]
    pub control_fsms: Vec<ControlFsm>,
    pub reset_strategy: ResetStrategy,
    #[serde(default)]
    pub timing_constraints: Vec<TimingConstraint>,
}

impl Microarchitecture {
    pub fn validate(&self) -> Result<(), String> {
        if self.datapath_components.is_empty() {
            return Err("microarchitecture has no datapath components".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.datapath_components {
            if c.name.trim().is_empty() {
                return Err("datapath component with empty name".into());
            }
            if !seen.insert(module_name_for(&c.name)) {
                return Err(format!("duplicate datapath component `{}`", c.name));
            }
        }
        Ok(())
    }
}

/// Module name derived from a datapath component name.
pub fn module_name_for(component: &str) -> String {
    let mut out = String::with_capacity(component.len());
    for ch in component.trim().chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let trimmed = out.trim_matches('_').to_string();
    if trimmed.starts_with(|c: char| c.is_ascii_digit()) {
        format!("m_{trimmed}")
    } else {
        trimmed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageKind {
    Code,
    Assertion,
    Functional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropertyType {
    Safety,
    Liveness,
    InterfaceProtocol,
    DataIntegrity,
    ResetBehavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VPlanEntry {
    pub entry_id: String,
    pub property_type: PropertyType,
    pub intent: String,
    #[serde(default)]
    pub target_signals: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationPlan {
    pub entries: Vec<VPlanEntry>,
    #[serde(default)]
    pub coverage_goals: BTreeMap<CoverageKind, f64>,
}

impl VerificationPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.entries.is_empty() {
            return Err("verification plan has no entries".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if e.entry_id.trim().is_empty() {
                return Err("vplan entry with empty id".into());
            }
            if !seen.insert(e.entry_id.as_str()) {
                return Err(format!("duplicate vplan entry `{}`", e.entry_id));
            }
            if e.intent.trim().is_empty() {
                return Err(format!("vplan entry `{}` has empty intent", e.entry_id));
            }
        }
        for (kind, pct) in &self.coverage_goals {
            if !is_percentage(*pct) {
                return Err(format!("coverage goal for {kind:?} out of range"));
            }
        }
        Ok(())
    }

    pub fn entry(&self, entry_id: &str) -> Option<&VPlanEntry> {
        self.entries.iter().find(|e| e.entry_id == entry_id)
    }
}

// ---------------------------------------------------------------------------
// Artifacts

pub const SOURCE_LANGUAGE: &str = "systemverilog";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactProvenance {
    AgentGenerated,
    HumanPatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtlArtifact {
    pub module_name: String,
    pub source_text: String,
    pub source_language_tag: String,
    pub revision: u32,
    pub provenance: ArtifactProvenance,
}

impl RtlArtifact {
    pub fn first(module_name: impl Into<String>, source_text: impl Into<String>) -> Self {
        Self {
            module_name: module_name.into(),
            source_text: source_text.into(),
            source_language_tag: SOURCE_LANGUAGE.to_string(),
            revision: 1,
            provenance: ArtifactProvenance::AgentGenerated,
        }
    }

    /// The next revision of this artifact with new source text.
    pub fn revised(&self, source_text: impl Into<String>, provenance: ArtifactProvenance) -> Self {
        Self {
            module_name: self.module_name.clone(),
            source_text: source_text.into(),
            source_language_tag: SOURCE_LANGUAGE.to_string(),
            revision: self.revision + 1,
            provenance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropertyStatus {
    Unchecked,
    Proven,
    Cex,
    ToolError,
    Waived,
}

impl PropertyStatus {
    /// The allowed status transition relation.
    pub fn can_transition_to(self, next: PropertyStatus) -> bool {
        use PropertyStatus::*;
        matches!(
            (self, next),
            (Unchecked, Proven | Cex | ToolError) | (Cex, Unchecked | Waived) | (ToolError, Unchecked)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropertyProvenance {
    AgentGenerated,
    HumanAdded,
    HumanEdited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvaProperty {
    pub property_id: PropertyId,
    pub vplan_entry_id: String,
    pub body_text: String,
    pub status: PropertyStatus,
    pub provenance: PropertyProvenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Fatal,
    Error,
    Warning,
}

impl Severity {
    pub fn blocks_signoff(self) -> bool {
        matches!(self, Severity::Fatal | Severity::Error)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Fatal => "FATAL",
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LintCategory {
    Syntax,
    Placeholder,
    WidthMismatch,
    UnsynthesizableConstruct,
    Style,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLocation {
    pub module: String,
    pub line: u32,
}

impl fmt::Display for SourceLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.module, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub severity: Severity,
    pub rule_code: String,
    pub message: String,
    pub location: SourceLocation,
    pub category: LintCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CexRecord {
    pub property_id: PropertyId,
    pub trace_summary: String,
    pub depth: u32,
    pub failing_signals: Vec<String>,
}

/// Consolidated coverage. `uncovered` lists the locations the tool reported
/// as not covered; `unreachable_waived` the subset humans waived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSnapshot {
    pub code_pct: f64,
    pub assertion_pct: f64,
    pub functional_pct: f64,
    #[serde(default)]
    pub uncovered: Vec<String>,
    #[serde(default)]
    pub unreachable_waived: Vec<String>,
    pub consolidated_pct: f64,
}

impl CoverageSnapshot {
    /// Builds a snapshot; `consolidated_pct` is the minimum of the three kinds.
    pub fn new(code_pct: f64, assertion_pct: f64, functional_pct: f64, uncovered: Vec<String>) -> Self {
        Self {
            code_pct,
            assertion_pct,
            functional_pct,
            uncovered,
            unreachable_waived: Vec::new(),
            consolidated_pct: code_pct.min(assertion_pct).min(functional_pct),
        }
    }

    pub fn pct(&self, kind: CoverageKind) -> f64 {
        match kind {
            CoverageKind::Code => self.code_pct,
            CoverageKind::Assertion => self.assertion_pct,
            CoverageKind::Functional => self.functional_pct,
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.code_pct,
            self.assertion_pct,
            self.functional_pct,
            self.consolidated_pct,
        ]
        .into_iter()
        .all(is_percentage)
    }

    /// Uncovered locations that have not been waived.
    pub fn unwaived(&self) -> Vec<&str> {
        self.uncovered
            .iter()
            .filter(|loc| !self.unreachable_waived.contains(loc))
            .map(String::as_str)
            .collect()
    }

    /// True when there is an uncovered gap and every location in it is waived.
    pub fn gap_fully_waived(&self) -> bool {
        !self.uncovered.is_empty() && self.unwaived().is_empty()
    }

    pub fn meets(&self, target_pct: f64) -> bool {
        self.consolidated_pct >= target_pct
    }
}

fn default_threshold() -> u32 {
    5
}

fn default_step_budget() -> u64 {
    10_000
}

fn default_critics() -> u32 {
    1
}

/// Parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub design_id: String,
    pub backend_id: BackendId,
    pub temperature: f64,
    #[serde(default = "default_threshold")]
    pub iteration_threshold: u32,
    /// Sign-off coverage target; `None` uses the design document's target.
    #[serde(default)]
    pub coverage_target_pct: Option<f64>,
    #[serde(default)]
    pub random_seed: u64,
    #[serde(default)]
    pub scenario_path: Option<PathBuf>,
    #[serde(default = "default_step_budget")]
    pub step_budget: u64,
    #[serde(default = "default_critics")]
    pub critic_count: u32,
    /// Adds the SystemVerilog LRM expert as an extra critic.
    #[serde(default)]
    pub lrm_expert: bool,
}

impl RunConfig {
    pub fn new(design_id: impl Into<String>, backend_id: impl Into<String>, temperature: f64) -> Self {
        Self {
            design_id: design_id.into(),
            backend_id: BackendId::new(backend_id),
            temperature,
            iteration_threshold: default_threshold(),
            coverage_target_pct: None,
            random_seed: 0,
            scenario_path: None,
            step_budget: default_step_budget(),
            critic_count: default_critics(),
            lrm_expert: false,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errors = Vec::new();
        if self.design_id.trim().is_empty() {
            errors.push(ValidationError::Empty("design_id".into()));
        }
        if !(self.temperature.is_finite() && (0.0..=2.0).contains(&self.temperature)) {
            errors.push(ValidationError::TargetOutOfRange("temperature".into()));
        }
        if self.iteration_threshold < 1 {
            errors.push(ValidationError::TargetOutOfRange("iteration_threshold".into()));
        }
        if let Some(t) = self.coverage_target_pct {
            if !is_percentage(t) {
                errors.push(ValidationError::TargetOutOfRange("coverage_target_pct".into()));
            }
        }
        if self.critic_count < 1 {
            errors.push(ValidationError::TargetOutOfRange("critic_count".into()));
        }
        // Room for at least the lifecycle events of a single escalation.
        if self.step_budget < 32 {
            errors.push(ValidationError::TargetOutOfRange("step_budget".into()));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(errors))
        }
    }
}

/// Logical accuracy of a generated RTL artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyClass {
    Correct,
    NonSynthesizable,
    Incorrect,
    Incomplete,
}

impl AccuracyClass {
    pub fn as_str(self) -> &'static str {
        match self {
            AccuracyClass::Correct => "correct",
            AccuracyClass::NonSynthesizable => "non-synthesizable",
            AccuracyClass::Incorrect => "incorrect",
            AccuracyClass::Incomplete => "incomplete",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn property_status_transitions() {
        use PropertyStatus::*;
        assert!(Unchecked.can_transition_to(Cex));
        assert!(Cex.can_transition_to(Unchecked));
        assert!(Cex.can_transition_to(Waived));
        assert!(ToolError.can_transition_to(Unchecked));
        assert!(!Proven.can_transition_to(Unchecked));
        assert!(!Unchecked.can_transition_to(Waived));
        assert!(!Waived.can_transition_to(Proven));
    }

    #[test]
    fn consolidated_is_minimum() {
        let snap = CoverageSnapshot::new(90.0, 73.08, 80.0, vec![]);
        assert_eq!(snap.consolidated_pct, 73.08);
        assert!(snap.is_valid());
    }

    #[test]
    fn waiver_covers_gap() {
        let mut snap = CoverageSnapshot::new(95.9, 97.0, 99.0, vec!["ecc_dec:88".into()]);
        assert!(!snap.gap_fully_waived());
        snap.unreachable_waived.push("ecc_dec:88".into());
        assert!(snap.gap_fully_waived());
    }

    #[test]
    fn run_config_rejects_hot_temperature() {
        let mut cfg = RunConfig::new("crc", "mock", 3.0);
        cfg.iteration_threshold = 0;
        let errs = cfg.validate().unwrap_err().0;
        assert!(errs.contains(&ValidationError::TargetOutOfRange("temperature".into())));
        assert!(errs.contains(&ValidationError::TargetOutOfRange("iteration_threshold".into())));
    }

    #[test]
    fn module_names_are_identifiers() {
        assert_eq!(module_name_for("CRC Core"), "crc_core");
        assert_eq!(module_name_for("  syndrome-decoder "), "syndrome_decoder");
        assert_eq!(module_name_for("8b encoder"), "m_8b_encoder");
    }

    #[test]
    fn glob_patterns() {
        assert!(glob_match("*", ""));
        assert!(glob_match("fix-cex:*", "fix-cex:crc.p1.3"));
        assert!(glob_match("crc.*.3", "crc.p1.3"));
        assert!(!glob_match("check:*", "block:crc"));
        assert!(glob_match("plan-design", "plan-design"));
        assert!(!glob_match("plan-design", "plan-design-2"));
    }

    #[test]
    fn round_pct_matches_literals() {
        assert_eq!(round_pct(100.0 * 19.0 / 26.0), 73.08);
        assert_eq!(round_pct(100.0 * 187.0 / 195.0), 95.90);
    }
}
