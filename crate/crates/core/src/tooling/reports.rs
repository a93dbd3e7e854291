//! Parsers and printers for the three report dialects.
//!
//! ```text
//! lint-v1      FATAL [STX-001] crc_core:12 unexpected token
//! formal-v1    PROVEN crc.p1.1
//!              CEX crc.p1.2 depth=3 signals=crc_out,data_valid trace=...
//!              ERROR crc.p1.3 solver timeout
//!              # wall_ms=412
//! coverage-v1  code 73.08 / assertion 80 / functional 91.5 / uncovered crc_core:40
//! ```
//!
//! Blank lines and other `#` comments are ignored.

use std::collections::BTreeMap;

use super::{FormalVerdict, PropertyVerdict, ToolError};
use crate::model::{
    is_percentage, CexRecord, CoverageSnapshot, LintCategory, LintFinding, PropertyId, Severity, SourceLocation,
};

fn bad(line: usize, reason: impl Into<String>) -> ToolError {
    ToolError::UnparseableReport {
        line,
        reason: reason.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(idx, line)| (idx + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty())
}

/// Category from the rule code's prefix. Unknown prefixes land in `other`.
pub fn category_for_rule(rule: &str) -> LintCategory {
    let prefix: String = rule
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    match prefix.as_str() {
        "STX" | "SYNTAX" => LintCategory::Syntax,
        "PH" => LintCategory::Placeholder,
        "W" if matches!(rule, "W116" | "W164") => LintCategory::WidthMismatch,
        "NS" | "SYNTH" => LintCategory::UnsynthesizableConstruct,
        "STY" | "STYLE" => LintCategory::Style,
        _ => LintCategory::Other,
    }
}

fn parse_severity(token: &str) -> Option<Severity> {
    match token {
        "FATAL" => Some(Severity::Fatal),
        "ERROR" => Some(Severity::Error),
        "WARNING" => Some(Severity::Warning),
        _ => None,
    }
}

pub fn parse_lint_report(text: &str) -> Result<Vec<LintFinding>, ToolError> {
    let mut findings = Vec::new();
    for (n, line) in content_lines(text) {
        if line.starts_with('#') {
            continue;
        }
        let (sev, rest) = line
            .split_once(' ')
            .ok_or_else(|| bad(n, "expected `SEVERITY [RULE] module:line`"))?;
        let severity = parse_severity(sev).ok_or_else(|| bad(n, format!("unknown severity `{sev}`")))?;
        let rest = rest.trim_start();
        let (rule, rest) = rest
            .strip_prefix('[')
            .and_then(|r| r.split_once(']'))
            .ok_or_else(|| bad(n, "missing [RULE]"))?;
        if rule.is_empty() || rule.contains(char::is_whitespace) {
            return Err(bad(n, "malformed rule code"));
        }
        let rest = rest.trim_start();
        let (loc, message) = rest.split_once(' ').unwrap_or((rest, ""));
        let (module, line_no) = loc
            .rsplit_once(':')
            .ok_or_else(|| bad(n, "location must be module:line"))?;
        let line_no: u32 = line_no
            .parse()
            .map_err(|_| bad(n, format!("bad line number `{line_no}`")))?;
        if module.is_empty() || line_no == 0 {
            return Err(bad(n, "location must name a module and a line >= 1"));
        }
        findings.push(LintFinding {
            severity,
            rule_code: rule.to_string(),
            message: message.trim().to_string(),
            location: SourceLocation {
                module: module.to_string(),
                line: line_no,
            },
            category: category_for_rule(rule),
        });
    }
    Ok(findings)
}

pub fn render_lint_report(findings: &[LintFinding]) -> String {
    let mut out = String::new();
    for f in findings {
        let line = format!("{} [{}] {} {}", f.severity.as_str(), f.rule_code, f.location, f.message);
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Findings grouped by category, with a per-severity histogram.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LintSummary {
    pub groups: BTreeMap<LintCategory, Vec<LintFinding>>,
    pub histogram: BTreeMap<Severity, usize>,
}

impl LintSummary {
    pub fn total(&self) -> usize {
        self.histogram.values().sum()
    }

    pub fn count(&self, severity: Severity) -> usize {
        self.histogram.get(&severity).copied().unwrap_or(0)
    }

    /// Fatal plus error findings.
    pub fn blocking(&self) -> usize {
        self.count(Severity::Fatal) + self.count(Severity::Error)
    }
}

pub fn categorize_lint(findings: &[LintFinding]) -> LintSummary {
    let mut summary = LintSummary::default();
    for f in findings {
        summary.groups.entry(f.category).or_default().push(f.clone());
        *summary.histogram.entry(f.severity).or_default() += 1;
    }
    summary
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormalReport {
    pub verdicts: Vec<PropertyVerdict>,
    pub wall_ms: u64,
}

fn property_id(n: usize, token: Option<&str>) -> Result<PropertyId, ToolError> {
    match token {
        Some(id) if !id.is_empty() => Ok(PropertyId::from(id)),
        _ => Err(bad(n, "missing property id")),
    }
}

fn parse_cex(n: usize, rest: &str) -> Result<PropertyVerdict, ToolError> {
    let (id, rest) = rest
        .split_once(' ')
        .ok_or_else(|| bad(n, "CEX needs depth, signals and trace"))?;
    let field = |text: &'_ str, key: &str| -> Result<(String, String), ToolError> {
        let text = text.trim_start();
        let value = text
            .strip_prefix(key)
            .ok_or_else(|| bad(n, format!("expected `{key}`")))?;
        Ok(match value.split_once(' ') {
            Some((v, tail)) => (v.to_string(), tail.to_string()),
            None => (value.to_string(), String::new()),
        })
    };
    let (depth, rest) = field(rest, "depth=")?;
    let depth: u32 = depth.parse().map_err(|_| bad(n, format!("bad depth `{depth}`")))?;
    let (signals, rest) = field(&rest, "signals=")?;
    let trace = rest
        .trim_start()
        .strip_prefix("trace=")
        .ok_or_else(|| bad(n, "expected `trace=`"))?;
    let failing_signals = signals
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let property_id = property_id(n, Some(id))?;
    Ok(PropertyVerdict {
        property_id: property_id.clone(),
        verdict: FormalVerdict::Cex(CexRecord {
            property_id,
            trace_summary: trace.to_string(),
            depth,
            failing_signals,
        }),
    })
}

pub fn parse_formal_report(text: &str) -> Result<FormalReport, ToolError> {
    let mut verdicts = Vec::new();
    let mut wall_ms = 0;
    for (n, line) in content_lines(text) {
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(ms) = comment.trim().strip_prefix("wall_ms=") {
                wall_ms = ms.parse().map_err(|_| bad(n, format!("bad wall_ms `{ms}`")))?;
            }
            continue;
        }
        let (word, rest) = line.split_once(' ').unwrap_or((line, ""));
        let verdict = match word {
            "PROVEN" => PropertyVerdict {
                property_id: property_id(n, Some(rest.trim()).filter(|r| !r.contains(' ')))?,
                verdict: FormalVerdict::Proven,
            },
            "CEX" => parse_cex(n, rest.trim())?,
            "ERROR" => {
                let (id, message) = rest.trim().split_once(' ').unwrap_or((rest.trim(), ""));
                PropertyVerdict {
                    property_id: property_id(n, Some(id))?,
                    verdict: FormalVerdict::ToolError {
                        message: message.trim().to_string(),
                    },
                }
            }
            other => return Err(bad(n, format!("unknown verdict `{other}`"))),
        };
        verdicts.push(verdict);
    }
    Ok(FormalReport { verdicts, wall_ms })
}

pub fn render_formal_report(report: &FormalReport) -> String {
    let mut out = format!("# wall_ms={}\n", report.wall_ms);
    for v in &report.verdicts {
        let line = match &v.verdict {
            FormalVerdict::Proven => format!("PROVEN {}", v.property_id),
            FormalVerdict::Cex(cex) => format!(
                "CEX {} depth={} signals={} trace={}",
                v.property_id,
                cex.depth,
                cex.failing_signals.join(","),
                cex.trace_summary
            ),
            FormalVerdict::ToolError { message } => format!("ERROR {} {}", v.property_id, message),
        };
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub fn parse_coverage_report(text: &str) -> Result<CoverageSnapshot, ToolError> {
    let mut pcts: [Option<f64>; 3] = [None; 3];
    let mut uncovered = Vec::new();
    for (n, line) in content_lines(text) {
        if line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(' ').ok_or_else(|| bad(n, "expected `kind value`"))?;
        let value = value.trim();
        let slot = match key {
            "code" => 0,
            "assertion" => 1,
            "functional" => 2,
            "uncovered" => {
                if value.is_empty() {
                    return Err(bad(n, "empty uncovered location"));
                }
                uncovered.push(value.to_string());
                continue;
            }
            other => return Err(bad(n, format!("unknown coverage line `{other}`"))),
        };
        let pct: f64 = value.parse().map_err(|_| bad(n, format!("bad percentage `{value}`")))?;
        if !is_percentage(pct) {
            return Err(bad(n, format!("{pct} is outside [0, 100]")));
        }
        if pcts[slot].replace(pct).is_some() {
            return Err(bad(n, format!("duplicate `{key}` line")));
        }
    }
    match pcts {
        [Some(code), Some(assertion), Some(functional)] => {
            Ok(CoverageSnapshot::new(code, assertion, functional, uncovered))
        }
        _ => Err(bad(0, "report needs code, assertion and functional lines")),
    }
}

pub fn render_coverage_report(snap: &CoverageSnapshot) -> String {
    let mut out = format!(
        "code {}\nassertion {}\nfunctional {}\n",
        snap.code_pct, snap.assertion_pct, snap.functional_pct
    );
    for loc in &snap.uncovered {
        out.push_str(&format!("uncovered {loc}\n"));
    }
    out
}
