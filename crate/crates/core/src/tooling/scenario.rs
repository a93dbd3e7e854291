//! Scenario files: mock scripts, the fake toolchain's fault schedule,
//! scripted human resolutions, and the expected metrics row.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::reports::{parse_coverage_report, parse_lint_report};
use crate::hitl::{ResolutionBody, Trigger};
use crate::llm::{IterationRange, ScriptEntry, TemperatureBucket};
use crate::model::{
    glob_match, is_percentage, validate_specification, AccuracyClass, ArtifactProvenance, DesignSpecification,
    PropertyProvenance,
};

pub const SCENARIO_SCHEMA: &str = "tapeloop-scenario/1";

fn all() -> IterationRange {
    IterationRange::ALL
}

fn star() -> String {
    "*".to_string()
}

fn is_all(range: &IterationRange) -> bool {
    *range == IterationRange::ALL
}

/// Lint outcome for matching artifacts: the report lines the linter prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LintRule {
    #[serde(default = "star")]
    pub module: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<TemperatureBucket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ArtifactProvenance>,
    #[serde(default = "all", skip_serializing_if = "is_all")]
    pub revisions: IterationRange,
    #[serde(default = "all", skip_serializing_if = "is_all")]
    pub invocations: IterationRange,
    #[serde(default)]
    pub findings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRule {
    #[serde(default = "star")]
    pub module: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<TemperatureBucket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ArtifactProvenance>,
    #[serde(default = "all", skip_serializing_if = "is_all")]
    pub revisions: IterationRange,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduledVerdict {
    Proven,
    Cex,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormalRule {
    pub property: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<TemperatureBucket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<PropertyProvenance>,
    #[serde(default = "all", skip_serializing_if = "is_all")]
    pub revisions: IterationRange,
    #[serde(default = "all", skip_serializing_if = "is_all")]
    pub invocations: IterationRange,
    pub verdict: ScheduledVerdict,
    #[serde(default)]
    pub depth: u32,
    #[serde(default)]
    pub signals: Vec<String>,
    #[serde(default)]
    pub trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<TemperatureBucket>,
    #[serde(default = "all", skip_serializing_if = "is_all")]
    pub invocations: IterationRange,
    /// Applies once at least this many human-added properties exist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_added_min: Option<u32>,
    pub code: f64,
    pub assertion: f64,
    pub functional: f64,
    #[serde(default)]
    pub uncovered: Vec<String>,
}

/// Ordered tool outcomes; the first matching rule wins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(default)]
    pub lint: Vec<LintRule>,
    #[serde(default)]
    pub reference: Vec<ReferenceRule>,
    #[serde(default)]
    pub formal: Vec<FormalRule>,
    #[serde(default)]
    pub coverage: Vec<CoverageRule>,
}

pub type ScriptedResolution = ResolutionBody;

/// A human reviewer's scripted answer to matching tickets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitlScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Trigger>,
    #[serde(default = "star")]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<TemperatureBucket>,
    /// 1-based count among tickets with the same trigger and source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occurrence: Option<u32>,
    pub resolution: ScriptedResolution,
}

impl HitlScript {
    /// Full replacement source for a scripted `patch-rtl`. The harness turns
    /// it into a diff against whatever revision is current when the ticket
    /// opens.
    pub fn replacement(&self) -> Option<&str> {
        if self.resolution.kind != crate::hitl::ResolutionKind::PatchRtl {
            return None;
        }
        self.resolution.payload.get("replacement")?.as_str()
    }

    pub fn matches(&self, trigger: Trigger, source: &str, bucket: TemperatureBucket, occurrence: u32) -> bool {
        self.trigger.is_none_or(|t| t == trigger)
            && glob_match(&self.source, source)
            && self.bucket.is_none_or(|b| b == bucket)
            && self.occurrence.is_none_or(|n| n == occurrence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTemperatureRow {
    pub temperature: f64,
    pub lint_errors_mas: u32,
    #[serde(default)]
    pub lint_fatal_mas: bool,
    pub lint_errors_hitl: u32,
    pub accuracy_mas: AccuracyClass,
    pub accuracy_hitl: AccuracyClass,
}

/// The benchmark row a scenario must reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRow {
    pub by_temperature: Vec<ExpectedTemperatureRow>,
    pub properties_mas: u32,
    pub properties_hitl: u32,
    pub coverage_mas_pct: f64,
    pub coverage_hitl_pct: f64,
    pub cex_mas: u32,
    pub cex_hitl: u32,
    pub hitl_rtl_minutes: u32,
    pub hitl_formal_minutes: u32,
    pub rtl_iterations: u32,
}

impl ExpectedRow {
    pub fn for_temperature(&self, temperature: f64) -> Option<&ExpectedTemperatureRow> {
        self.by_temperature.iter().find(|r| r.temperature == temperature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: String,
    pub design_id: String,
    /// Specification document, relative to the scenario file.
    pub spec_file: PathBuf,
    pub temperatures: Vec<f64>,
    #[serde(default)]
    pub placeholder_markers: Vec<String>,
    pub scripts: Vec<ScriptEntry>,
    pub schedule: Schedule,
    #[serde(default)]
    pub hitl: Vec<HitlScript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectedRow>,
    /// Contents of `spec_file`, filled in by the loader.
    #[serde(skip)]
    pub spec_text: String,
    #[serde(skip)]
    pub spec: Option<DesignSpecification>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("scenario incomplete, missing: {}", .0.join(", "))]
    ScenarioIncomplete(Vec<String>),
    #[error("i/o: {0}")]
    Io(String),
}

fn check_pct(errors: &mut Vec<String>, what: &str, value: f64) {
    if !is_percentage(value) {
        errors.push(format!("{what} = {value} is outside [0, 100]"));
    }
}

/// Parses and schema-checks a scenario. `base_dir` resolves `spec_file`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    let mut scenario: Scenario =
        serde_json::from_str(text).map_err(|e| ScenarioError::SchemaViolation(e.to_string()))?;
    let mut errors = Vec::new();
    if scenario.schema != SCENARIO_SCHEMA {
        errors.push(format!("schema must be `{SCENARIO_SCHEMA}`, got `{}`", scenario.schema));
    }
    if scenario.design_id.trim().is_empty() {
        errors.push("design_id is empty".into());
    }
    if scenario.temperatures.is_empty() {
        errors.push("no temperatures".into());
    }
    for t in &scenario.temperatures {
        if !(t.is_finite() && (0.0..=2.0).contains(t)) {
            errors.push(format!("temperature {t} is outside [0, 2]"));
        }
    }
    for (i, rule) in scenario.schedule.lint.iter().enumerate() {
        if let Err(e) = parse_lint_report(&rule.findings.join("\n")) {
            errors.push(format!("schedule.lint[{i}]: {e}"));
        }
    }
    for (i, rule) in scenario.schedule.coverage.iter().enumerate() {
        check_pct(&mut errors, &format!("schedule.coverage[{i}].code"), rule.code);
        check_pct(
            &mut errors,
            &format!("schedule.coverage[{i}].assertion"),
            rule.assertion,
        );
        check_pct(
            &mut errors,
            &format!("schedule.coverage[{i}].functional"),
            rule.functional,
        );
        let report = format!(
            "code {}\nassertion {}\nfunctional {}\n",
            rule.code, rule.assertion, rule.functional
        );
        if is_percentage(rule.code) && is_percentage(rule.assertion) && is_percentage(rule.functional) {
            if let Err(e) = parse_coverage_report(&report) {
                errors.push(format!("schedule.coverage[{i}]: {e}"));
            }
        }
    }
    for (i, rule) in scenario.schedule.formal.iter().enumerate() {
        if rule.property.is_empty() {
            errors.push(format!("schedule.formal[{i}]: empty property pattern"));
        }
        if rule.signals.iter().any(|s| s.is_empty() || s.contains([',', ' '])) {
            errors.push(format!(
                "schedule.formal[{i}]: signal names must not contain commas or spaces"
            ));
        }
    }
    for (i, script) in scenario.hitl.iter().enumerate() {
        if let Some(replacement) = script.replacement() {
            if replacement.trim().is_empty() {
                errors.push(format!("hitl[{i}]: empty replacement text"));
            }
            continue;
        }
        if let Err(e) = script.resolution.validate_shape() {
            errors.push(format!("hitl[{i}]: {e}"));
        }
    }
    if let Some(expected) = &scenario.expected {
        check_pct(&mut errors, "expected.coverage_mas_pct", expected.coverage_mas_pct);
        check_pct(&mut errors, "expected.coverage_hitl_pct", expected.coverage_hitl_pct);
        for t in &scenario.temperatures {
            if expected.for_temperature(*t).is_none() {
                errors.push(format!("expected row has no entry for temperature {t}"));
            }
        }
    }

    let spec_path = base_dir.join(&scenario.spec_file);
    match fs::read_to_string(&spec_path) {
        Ok(text) => match validate_specification(&text) {
            Ok(spec) => {
                if spec.design_id != scenario.design_id {
                    errors.push(format!(
                        "spec design_id `{}` differs from scenario design_id `{}`",
                        spec.design_id, scenario.design_id
                    ));
                }
                scenario.spec = Some(spec);
                scenario.spec_text = text;
            }
            Err(e) => errors.push(format!("spec_file: {e}")),
        },
        Err(e) => errors.push(format!("spec_file {}: {e}", spec_path.display())),
    }

    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::SchemaViolation(errors.join("; ")))
    }
}

/// Loads a scenario and checks that it is total: a dry run at every
/// temperature must never miss a script entry, schedule rule or resolution.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let scenario = parse_scenario(&text, base)?;
    let missing = crate::workflow::check_totality(&scenario);
    if missing.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::ScenarioIncomplete(missing))
    }
}

impl Scenario {
    /// Scripted mock entries, checked against the workflow's request keys.
    pub fn scripts(&self) -> &[ScriptEntry] {
        &self.scripts
    }

    pub fn spec(&self) -> &DesignSpecification {
        self.spec.as_ref().expect("scenario loaded through parse_scenario")
    }

    pub fn hitl_for(
        &self,
        trigger: Trigger,
        source: &str,
        bucket: TemperatureBucket,
        occurrence: u32,
    ) -> Option<&HitlScript> {
        self.hitl
            .iter()
            .find(|h| h.matches(trigger, source, bucket, occurrence))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_spec(dir: &Path) {
        let spec = "design_id: crc\ncoverage_target_pct: 100\n\n[requirements]\nCRC-16 over a byte stream.\n\n[interfaces]\nclk in 1\ndata_in in 8\ncrc_out out 16\n\n[performance]\nthroughput 1 byte/cycle\n\n[fsm]\n";
        fs::write(dir.join("crc.spec"), spec).unwrap();
    }

    fn minimal(coverage: f64) -> String {
        format!(
            r#"{{"schema": "tapeloop-scenario/1", "design_id": "crc", "spec_file": "crc.spec",
               "temperatures": [0.2], "scripts": [],
               "schedule": {{"coverage": [{{"code": {coverage}, "assertion": 90, "functional": 90}}]}}}}"#
        )
    }

    #[test]
    fn coverage_out_of_range_is_schema_violation() {
        let dir = tempfile::tempdir().unwrap();
        write_spec(dir.path());
        assert!(parse_scenario(&minimal(73.08), dir.path()).is_ok());
        let err = parse_scenario(&minimal(104.2), dir.path()).unwrap_err();
        assert!(matches!(err, ScenarioError::SchemaViolation(m) if m.contains("104.2")));
    }

    #[test]
    fn bad_lint_line_is_schema_violation() {
        let dir = tempfile::tempdir().unwrap();
        write_spec(dir.path());
        let text = minimal(50.0).replace(
            r#""schedule": {"#,
            r#""schedule": {"lint": [{"findings": ["OOPS [X] m:1"]}], "#,
        );
        assert!(
            matches!(parse_scenario(&text, dir.path()), Err(ScenarioError::SchemaViolation(m)) if m.contains("lint[0]"))
        );
    }

    #[test]
    fn missing_spec_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(
            matches!(parse_scenario(&minimal(50.0), dir.path()), Err(ScenarioError::SchemaViolation(m)) if m.contains("spec_file"))
        );
    }
}
