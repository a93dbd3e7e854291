//! Evaluation bookkeeping: accuracy classes, per-run metrics derived from
//! an event log, benchmark tables and the zero-shot comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::DeliberationResult;
use crate::bus::EventRecord;
use crate::model::{AccuracyClass, LintCategory, LintFinding, Phase, PropertyStatus, Severity, Stream};
use crate::workflow::{RunEvent, RunState};

/// What the classifier looks at for one artifact.
#[derive(Debug, Clone, Copy)]
pub struct AccuracyEvidence<'a> {
    pub findings: &'a [LintFinding],
    /// Reference-model comparison; `None` when no reference exists.
    pub functional_pass: Option<bool>,
    /// Lines carrying a placeholder marker.
    pub placeholder_hits: usize,
}

/// incomplete > incorrect > non-synthesizable > correct.
pub fn classify_logical_accuracy(e: &AccuracyEvidence<'_>) -> AccuracyClass {
    if e.placeholder_hits > 0 || e.findings.iter().any(|f| f.category == LintCategory::Placeholder) {
        return AccuracyClass::Incomplete;
    }
    if e.functional_pass == Some(false) {
        return AccuracyClass::Incorrect;
    }
    let unsynth = e.findings.iter().any(|f| {
        f.category == LintCategory::UnsynthesizableConstruct
            || f.severity == Severity::Fatal
            || (f.category == LintCategory::Syntax && f.severity.blocks_signoff())
    });
    if unsynth {
        AccuracyClass::NonSynthesizable
    } else {
        AccuracyClass::Correct
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("incomplete log: {0}")]
    IncompleteLog(String),
    #[error("empty table")]
    EmptyTable,
    #[error("design sets differ: {0}")]
    DesignSetMismatch(String),
}

/// One benchmark row: autonomous (MAS) columns against final (HITL) ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub design_id: String,
    pub temperature: f64,
    pub lint_errors_mas: u32,
    pub lint_fatal_mas: bool,
    pub lint_errors_hitl: u32,
    pub lint_fatal_hitl: bool,
    pub accuracy_mas: AccuracyClass,
    pub accuracy_hitl: AccuracyClass,
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

fn fold(records: &[EventRecord]) -> Result<RunState, MetricsError> {
    let mut state = RunState::default();
    for r in records {
        state
            .apply(&r.payload)
            .map_err(|e| MetricsError::IncompleteLog(format!("seq {}: {e}", r.seq)))?;
    }
    Ok(state)
}

/// Derives the metrics row from a terminated run's log alone. MAS columns
/// come from the state frozen when each stream first escalated (or
/// completed without escalating); HITL columns from the final state.
pub fn compute_run_metrics(records: &[EventRecord]) -> Result<RunMetrics, MetricsError> {
    let state = fold(records)?;
    let Some(config) = &state.config else {
        return Err(MetricsError::IncompleteLog("no run-created event".into()));
    };
    if !state.phase.is_terminal() {
        return Err(MetricsError::IncompleteLog(format!("run is still {}", state.phase)));
    }
    let design = state.metrics.design_mas.as_ref();
    let verification = state.metrics.verification_mas.as_ref();
    let (Some(design), Some(verification)) = (design, verification) else {
        return Err(MetricsError::IncompleteLog(format!(
            "run {} before both streams reached the execution phase",
            if state.phase == Phase::Aborted {
                "aborted"
            } else {
                "ended"
            }
        )));
    };
    let Some(coverage) = &state.coverage else {
        return Err(MetricsError::IncompleteLog("no coverage report".into()));
    };

    let mut rtl_iterations: BTreeMap<&str, u32> = BTreeMap::new();
    for r in records {
        if let RunEvent::DeliberationConcluded {
            source,
            result: DeliberationResult::Accepted,
            iterations,
        } = &r.payload
        {
            if source.starts_with("block:") {
                rtl_iterations.entry(source.as_str()).or_insert(*iterations);
            }
        }
    }

    let (lint_errors_hitl, lint_fatal_hitl) = state.lint_errors();
    let minutes = |s: Stream| state.metrics.hitl_minutes.get(&s).copied().unwrap_or(0);
    Ok(RunMetrics {
        run_id: state.run_id.to_string(),
        design_id: state.design_id().to_string(),
        temperature: config.temperature,
        lint_errors_mas: design.lint_errors,
        lint_fatal_mas: design.lint_fatal,
        lint_errors_hitl,
        lint_fatal_hitl,
        accuracy_mas: design.accuracy,
        accuracy_hitl: state.accuracy(),
        properties_mas: verification.properties,
        properties_hitl: state.properties.len() as u32,
        coverage_mas_pct: verification.coverage_pct,
        coverage_hitl_pct: coverage.consolidated_pct,
        cex_mas: verification.cex,
        cex_hitl: state.properties_with(PropertyStatus::Cex).len() as u32,
        hitl_rtl_minutes: minutes(Stream::Design),
        hitl_formal_minutes: minutes(Stream::Verification),
        rtl_iterations: rtl_iterations.values().copied().max().unwrap_or(0),
    })
}

/// Arithmetic means of the numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub lint_errors_mas: f64,
    pub lint_errors_hitl: f64,
    pub properties_mas: f64,
    pub properties_hitl: f64,
    pub coverage_mas_pct: f64,
    pub coverage_hitl_pct: f64,
    pub cex_mas: f64,
    pub cex_hitl: f64,
    pub hitl_rtl_minutes: f64,
    pub hitl_formal_minutes: f64,
    pub rtl_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<RunMetrics>,
    pub aggregates: Aggregates,
}

fn mean(rows: &[RunMetrics], f: impl Fn(&RunMetrics) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

pub fn aggregate_table(rows: Vec<RunMetrics>) -> Result<BenchmarkTable, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::EmptyTable);
    }
    let aggregates = Aggregates {
        lint_errors_mas: mean(&rows, |r| r.lint_errors_mas as f64),
        lint_errors_hitl: mean(&rows, |r| r.lint_errors_hitl as f64),
        properties_mas: mean(&rows, |r| r.properties_mas as f64),
        properties_hitl: mean(&rows, |r| r.properties_hitl as f64),
        coverage_mas_pct: mean(&rows, |r| r.coverage_mas_pct),
        coverage_hitl_pct: mean(&rows, |r| r.coverage_hitl_pct),
        cex_mas: mean(&rows, |r| r.cex_mas as f64),
        cex_hitl: mean(&rows, |r| r.cex_hitl as f64),
        hitl_rtl_minutes: mean(&rows, |r| r.hitl_rtl_minutes as f64),
        hitl_formal_minutes: mean(&rows, |r| r.hitl_formal_minutes as f64),
        rtl_iterations: mean(&rows, |r| r.rtl_iterations as f64),
    };
    Ok(BenchmarkTable { rows, aggregates })
}

/// One design's coverage from an external source, e.g. a zero-shot baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub design_id: String,
    pub coverage_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRows {
    pub rows: Vec<CoverageRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDelta {
    pub design_id: String,
    pub mas_pct: f64,
    pub zero_shot_pct: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotComparison {
    pub deltas: Vec<DesignDelta>,
    pub mean_delta: f64,
}

/// Per-design mean, so several runs of one design count once.
fn by_design(rows: &[CoverageRow]) -> BTreeMap<&str, f64> {
    let mut acc: BTreeMap<&str, (f64, u32)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.design_id.as_str()).or_default();
        e.0 += r.coverage_pct;
        e.1 += 1;
    }
    acc.into_iter().map(|(d, (sum, n))| (d, sum / n as f64)).collect()
}

/// Coverage deltas `mas - zero_shot` per design and their mean.
pub fn compare_zero_shot(mas: &[CoverageRow], zero_shot: &[CoverageRow]) -> Result<ZeroShotComparison, MetricsError> {
    let mas = by_design(mas);
    let zero = by_design(zero_shot);
    if mas.is_empty() {
        return Err(MetricsError::EmptyTable);
    }
    if mas.keys().ne(zero.keys()) {
        let names = |m: &BTreeMap<&str, f64>| m.keys().copied().collect::<Vec<_>>().join(",");
        return Err(MetricsError::DesignSetMismatch(format!(
            "[{}] vs [{}]",
            names(&mas),
            names(&zero)
        )));
    }
    let deltas: Vec<DesignDelta> = mas
        .iter()
        .map(|(design, m)| DesignDelta {
            design_id: design.to_string(),
            mas_pct: *m,
            zero_shot_pct: zero[design],
            delta: m - zero[design],
        })
        .collect();
    let mean_delta = deltas.iter().map(|d| d.delta).sum::<f64>() / deltas.len() as f64;
    Ok(ZeroShotComparison { deltas, mean_delta })
}

/// Initial (MAS) coverage of each row, for [`compare_zero_shot`].
pub fn mas_coverage(rows: &[RunMetrics]) -> Vec<CoverageRow> {
    rows.iter()
        .map(|r| CoverageRow {
            design_id: r.design_id.clone(),
            coverage_pct: r.coverage_mas_pct,
        })
        .collect()
}

fn lint_cell(count: u32, fatal: bool) -> String {
    if fatal {
        format!("{count} fatal")
    } else {
        count.to_string()
    }
}

/// Aligned plain-text rendering, one line per row plus a mean line.
pub fn render_table(table: &BenchmarkTable) -> String {
    let header = [
        "design",
        "temp",
        "lint mas",
        "lint hitl",
        "accuracy mas",
        "accuracy hitl",
        "props",
        "coverage %",
        "cex",
        "hitl min",
        "rtl iter",
    ];
    let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &table.rows {
        lines.push(vec![
            r.design_id.clone(),
            format!("{}", r.temperature),
            lint_cell(r.lint_errors_mas, r.lint_fatal_mas),
            lint_cell(r.lint_errors_hitl, r.lint_fatal_hitl),
            r.accuracy_mas.as_str().to_string(),
            r.accuracy_hitl.as_str().to_string(),
            format!("{} -> {}", r.properties_mas, r.properties_hitl),
            format!("{:.2} -> {:.2}", r.coverage_mas_pct, r.coverage_hitl_pct),
            format!("{} -> {}", r.cex_mas, r.cex_hitl),
            format!("{}/{}", r.hitl_rtl_minutes, r.hitl_formal_minutes),
            r.rtl_iterations.to_string(),
        ]);
    }
    let a = &table.aggregates;
    lines.push(vec![
        "mean".into(),
        String::new(),
        format!("{:.2}", a.lint_errors_mas),
        format!("{:.2}", a.lint_errors_hitl),
        String::new(),
        String::new(),
        format!("{:.2} -> {:.2}", a.properties_mas, a.properties_hitl),
        format!("{:.3} -> {:.3}", a.coverage_mas_pct, a.coverage_hitl_pct),
        format!("{:.2} -> {:.2}", a.cex_mas, a.cex_hitl),
        format!("{:.1}/{:.1}", a.hitl_rtl_minutes, a.hitl_formal_minutes),
        format!("{:.2}", a.rtl_iterations),
    ]);
    let widths: Vec<usize> = (0..header.len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &lines {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SourceLocation;

    fn finding(severity: Severity, category: LintCategory) -> LintFinding {
        LintFinding {
            severity,
            rule_code: "X".into(),
            message: "m".into(),
            location: SourceLocation {
                module: "m".into(),
                line: 1,
            },
            category,
        }
    }

    fn classify(findings: &[LintFinding], pass: Option<bool>, hits: usize) -> AccuracyClass {
        classify_logical_accuracy(&AccuracyEvidence {
            findings,
            functional_pass: pass,
            placeholder_hits: hits,
        })
    }

    #[test]
    fn accuracy_precedence() {
        assert_eq!(classify(&[], Some(true), 0), AccuracyClass::Correct);
        let ns = [finding(Severity::Warning, LintCategory::UnsynthesizableConstruct)];
        assert_eq!(classify(&ns, Some(true), 0), AccuracyClass::NonSynthesizable);
        assert_eq!(classify(&ns, Some(false), 0), AccuracyClass::Incorrect);
        assert_eq!(classify(&ns, Some(false), 2), AccuracyClass::Incomplete);
        let ph = [finding(Severity::Fatal, LintCategory::Placeholder)];
        assert_eq!(classify(&ph, Some(true), 0), AccuracyClass::Incomplete);
        let fatal = [finding(Severity::Fatal, LintCategory::Syntax)];
        assert_eq!(classify(&fatal, None, 0), AccuracyClass::NonSynthesizable);
        let style = [finding(Severity::Error, LintCategory::Style)];
        assert_eq!(classify(&style, None, 0), AccuracyClass::Correct);
    }

    fn row(design: &str, mas: f64, hitl: f64) -> RunMetrics {
        RunMetrics {
            run_id: design.into(),
            design_id: design.into(),
            temperature: 0.2,
            lint_errors_mas: 0,
            lint_fatal_mas: false,
            lint_errors_hitl: 0,
            lint_fatal_hitl: false,
            accuracy_mas: AccuracyClass::Correct,
            accuracy_hitl: AccuracyClass::Correct,
            properties_mas: 10,
            properties_hitl: 12,
            coverage_mas_pct: mas,
            coverage_hitl_pct: hitl,
            cex_mas: 1,
            cex_hitl: 0,
            hitl_rtl_minutes: 15,
            hitl_formal_minutes: 20,
            rtl_iterations: 2,
        }
    }

    #[test]
    fn single_row_aggregates_equal_the_row() {
        let t = aggregate_table(vec![row("crc", 73.08, 100.0)]).unwrap();
        assert_eq!(t.aggregates.coverage_mas_pct, 73.08);
        assert_eq!(t.aggregates.coverage_hitl_pct, 100.0);
        assert_eq!(t.aggregates.rtl_iterations, 2.0);
        assert_eq!(aggregate_table(vec![]), Err(MetricsError::EmptyTable));
    }

    #[test]
    fn zero_shot_identity_and_mismatch() {
        let rows = vec![
            CoverageRow {
                design_id: "a".into(),
                coverage_pct: 80.0,
            },
            CoverageRow {
                design_id: "b".into(),
                coverage_pct: 60.0,
            },
        ];
        let same = compare_zero_shot(&rows, &rows).unwrap();
        assert!(same.deltas.iter().all(|d| d.delta == 0.0));
        assert_eq!(same.mean_delta, 0.0);
        assert!(matches!(
            compare_zero_shot(&rows, &rows[..1]),
            Err(MetricsError::DesignSetMismatch(_))
        ));
    }

    #[test]
    fn table_renders_a_mean_line() {
        let t = aggregate_table(vec![row("crc", 73.08, 100.0), row("ecc", 93.88, 95.9)]).unwrap();
        let text = render_table(&t);
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("mean"));
        assert!(text.contains("83.480 -> 97.950"));
    }
}
