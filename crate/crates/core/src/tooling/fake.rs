//! Deterministic toolchain answering from a scenario's schedule. It renders
//! the same report text a real tool would, so everything above the parser
//! is shared with the subprocess adapters.

use super::reports::render_coverage_report;
use super::scenario::{Schedule, ScheduledVerdict};
use super::{Invocation, ReferenceProbe, ToolAdapter, ToolError, ToolKind};
use crate::llm::TemperatureBucket;
use crate::model::{glob_match, CoverageSnapshot, PropertyProvenance, RtlArtifact};

pub struct FakeAdapter {
    kind: ToolKind,
    schedule: Schedule,
}

impl FakeAdapter {
    pub fn new(kind: ToolKind, schedule: Schedule) -> Self {
        Self { kind, schedule }
    }

    fn lint(&self, inv: &Invocation) -> Result<String, ToolError> {
        let artifact = inv
            .artifacts
            .first()
            .ok_or_else(|| ToolError::ScheduleMiss("lint invocation without an artifact".into()))?;
        let rule = self
            .schedule
            .lint
            .iter()
            .find(|r| {
                glob_match(&r.module, &artifact.module_name)
                    && r.bucket.is_none_or(|b| b == inv.bucket)
                    && r.provenance.is_none_or(|p| p == artifact.provenance)
                    && r.revisions.contains(artifact.revision)
                    && r.invocations.contains(inv.index)
            })
            .ok_or_else(|| {
                ToolError::ScheduleMiss(format!(
                    "lint {} r{} {} #{}",
                    artifact.module_name, artifact.revision, inv.bucket, inv.index
                ))
            })?;
        let mut report = rule.findings.join("\n");
        if !report.is_empty() {
            report.push('\n');
        }
        Ok(report)
    }

    fn formal(&self, inv: &Invocation) -> Result<String, ToolError> {
        let mut report = String::from("# wall_ms=0\n");
        for input in &inv.properties {
            let p = &input.property;
            let rule = self
                .schedule
                .formal
                .iter()
                .find(|r| {
                    glob_match(&r.property, p.property_id.as_str())
                        && r.bucket.is_none_or(|b| b == inv.bucket)
                        && r.provenance.is_none_or(|pv| pv == p.provenance)
                        && r.revisions.contains(input.revision)
                        && r.invocations.contains(inv.index)
                })
                .ok_or_else(|| {
                    ToolError::ScheduleMiss(format!(
                        "formal {} r{} {} #{}",
                        p.property_id, input.revision, inv.bucket, inv.index
                    ))
                })?;
            let line = match rule.verdict {
                ScheduledVerdict::Proven => format!("PROVEN {}", p.property_id),
                ScheduledVerdict::Cex => format!(
                    "CEX {} depth={} signals={} trace={}",
                    p.property_id,
                    rule.depth,
                    rule.signals.join(","),
                    rule.trace
                ),
                ScheduledVerdict::Error => format!("ERROR {} {}", p.property_id, rule.trace),
            };
            report.push_str(line.trim_end());
            report.push('\n');
        }
        Ok(report)
    }

    fn coverage(&self, inv: &Invocation) -> Result<String, ToolError> {
        let human_added = inv
            .properties
            .iter()
            .filter(|p| p.property.provenance == PropertyProvenance::HumanAdded)
            .count() as u32;
        let rule = self
            .schedule
            .coverage
            .iter()
            .find(|r| {
                r.bucket.is_none_or(|b| b == inv.bucket)
                    && r.invocations.contains(inv.index)
                    && r.human_added_min.is_none_or(|min| human_added >= min)
            })
            .ok_or_else(|| {
                ToolError::ScheduleMiss(format!(
                    "coverage {} #{} human-added={human_added}",
                    inv.bucket, inv.index
                ))
            })?;
        let snap = CoverageSnapshot::new(rule.code, rule.assertion, rule.functional, rule.uncovered.clone());
        Ok(render_coverage_report(&snap))
    }
}

impl ToolAdapter for FakeAdapter {
    fn kind(&self) -> ToolKind {
        self.kind
    }

    fn invoke(&self, inv: &Invocation) -> Result<String, ToolError> {
        match self.kind {
            ToolKind::Lint => self.lint(inv),
            ToolKind::Formal => self.formal(inv),
            ToolKind::Coverage => self.coverage(inv),
        }
    }
}

pub struct FakeReference {
    schedule: Schedule,
}

impl FakeReference {
    pub fn new(schedule: Schedule) -> Self {
        Self { schedule }
    }
}

impl ReferenceProbe for FakeReference {
    fn check(&self, artifact: &RtlArtifact, bucket: TemperatureBucket) -> Result<Option<bool>, ToolError> {
        if self.schedule.reference.is_empty() {
            return Ok(None);
        }
        self.schedule
            .reference
            .iter()
            .find(|r| {
                glob_match(&r.module, &artifact.module_name)
                    && r.bucket.is_none_or(|b| b == bucket)
                    && r.provenance.is_none_or(|p| p == artifact.provenance)
                    && r.revisions.contains(artifact.revision)
            })
            .map(|r| Some(r.pass))
            .ok_or_else(|| {
                ToolError::ScheduleMiss(format!(
                    "reference {} r{} {bucket}",
                    artifact.module_name, artifact.revision
                ))
            })
    }
}
