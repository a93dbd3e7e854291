use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::parse::extract_block;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accept,
    Revise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueKind {
    MissingLogic,
    SyntaxError,
    CoverageGap,
    Redundancy,
    SpecMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

impl Issue {
    pub fn new(kind: IssueKind, detail: impl Into<String>, location: Option<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
            location,
        }
    }
}

/// A reviewer's verdict. Built only through [`CritiqueResult::from_issues`],
/// so `verdict == accept` exactly when `issues` is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueResult {
    pub verdict: Verdict,
    pub issues: Vec<Issue>,
}

impl CritiqueResult {
    pub fn from_issues(issues: Vec<Issue>) -> Self {
        let verdict = if issues.is_empty() {
            Verdict::Accept
        } else {
            Verdict::Revise
        };
        Self { verdict, issues }
    }

    pub fn accept() -> Self {
        Self::from_issues(Vec::new())
    }

    pub fn is_accept(&self) -> bool {
        self.verdict == Verdict::Accept
    }

    pub fn is_consistent(&self) -> bool {
        (self.verdict == Verdict::Accept) == self.issues.is_empty()
    }

    /// Issue kinds present, in a stable order.
    pub fn kinds(&self) -> BTreeSet<IssueKind> {
        self.issues.iter().map(|i| i.kind).collect()
    }
}

#[derive(Deserialize)]
struct RawCritique {
    #[serde(default)]
    verdict: Option<Verdict>,
    #[serde(default)]
    issues: Vec<Issue>,
}

/// Reads the issue list from a ```critique block. A `revise` verdict without
/// issues becomes a single generic issue so the coupling still holds.
pub fn parse_critique(text: &str) -> Option<Vec<Issue>> {
    let block = extract_block(text, "critique")?;
    let raw: RawCritique = serde_json::from_str(block).ok()?;
    let mut issues = raw.issues;
    if issues.is_empty() && raw.verdict == Some(Verdict::Revise) {
        issues.push(Issue::new(
            IssueKind::MissingLogic,
            "reviewer asked for another revision",
            None,
        ));
    }
    Some(issues)
}

/// One missing-logic issue per line containing any placeholder marker.
pub fn scan_placeholders(text: &str, markers: &[String], module: &str) -> Vec<Issue> {
    text.lines()
        .enumerate()
        .filter_map(|(idx, line)| {
            let marker = markers.iter().find(|m| !m.is_empty() && line.contains(m.as_str()))?;
            Some(Issue::new(
                IssueKind::MissingLogic,
                format!("placeholder `{marker}` left in place"),
                Some(format!("{module}:{}", idx + 1)),
            ))
        })
        .collect()
}

fn normalize(body: &str) -> String {
    body.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Redundancy issues for bodies repeated within `new` or already present in
/// `existing`. Whitespace differences do not count.
pub fn duplicate_bodies(new: &[String], existing: &[String]) -> Vec<Issue> {
    let mut seen: BTreeSet<String> = existing.iter().map(|b| normalize(b)).collect();
    let mut issues = Vec::new();
    for (idx, body) in new.iter().enumerate() {
        if !seen.insert(normalize(body)) {
            issues.push(Issue::new(
                IssueKind::Redundancy,
                format!("property duplicates an existing body: {}", body.trim()),
                Some(format!("line {}", idx + 1)),
            ));
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_follows_issues() {
        assert!(CritiqueResult::accept().is_accept());
        let c = CritiqueResult::from_issues(vec![Issue::new(IssueKind::SyntaxError, "x", None)]);
        assert_eq!(c.verdict, Verdict::Revise);
        assert!(c.is_consistent());
    }

    #[test]
    fn placeholder_marker_flagged_with_location() {
        let rtl = "module ecc_enc;\n  assign p = 0; // TODO_LOGIC parity\nendmodule";
        let issues = scan_placeholders(rtl, &["TODO_LOGIC".into()], "ecc_enc");
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, IssueKind::MissingLogic);
        assert_eq!(issues[0].location.as_deref(), Some("ecc_enc:2"));
        assert!(scan_placeholders("module ok; endmodule", &["TODO_LOGIC".into()], "m").is_empty());
    }

    #[test]
    fn duplicated_property_is_redundant() {
        let existing = vec!["a |-> ##1 b".to_string()];
        let issues = duplicate_bodies(&["a  |->  ##1 b".into(), "c |-> d".into()], &existing);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, IssueKind::Redundancy);
    }

    #[test]
    fn critique_block_parsing() {
        let text = "Looks close.\n```critique\n{\"issues\": [{\"kind\": \"coverage-gap\", \"detail\": \"no reset check\"}]}\n```";
        let issues = parse_critique(text).unwrap();
        assert_eq!(issues[0].kind, IssueKind::CoverageGap);
        assert_eq!(parse_critique("```critique\n{\"issues\": []}\n```").unwrap(), vec![]);
        assert_eq!(
            parse_critique("```critique\n{\"verdict\": \"revise\"}\n```")
                .unwrap()
                .len(),
            1
        );
        assert!(parse_critique("fine by me").is_none());
    }
}
