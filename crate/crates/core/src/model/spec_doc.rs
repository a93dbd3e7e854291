//! Specification document format.
//!
//! ```text
//! design_id: crc
//! coverage_target_pct: 100
//!
//! [requirements]
//! Free prose. Blank lines separate requirement blocks.
//!
//! [interfaces]
//! clk in 1
//! data_in in 8
//!
//! [performance]
//! fmax 200 MHz
//!
//! [fsm]
//! IDLE: wait for data_valid, go to CALC
//! ```
//!
//! The full grammar lives in `docs/spec-format.md`.

use std::collections::BTreeSet;

use super::{
    is_percentage, DesignSpecification, FsmState, PerformanceTarget, PortDef, PortDirection, ValidationError,
    ValidationErrors,
};

const SECTIONS: [&str; 4] = ["requirements", "interfaces", "performance", "fsm"];
const DEFAULT_COVERAGE_TARGET: f64 = 95.0;

/// Parses and validates a specification document, collecting every violation.
pub fn validate_specification(raw: &str) -> Result<DesignSpecification, ValidationErrors> {
    let (spec, errors) = parse_specification(raw);
    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(ValidationErrors(errors))
    }
}

/// Best-effort parse: returns whatever could be read plus all violations.
pub fn parse_specification(raw: &str) -> (DesignSpecification, Vec<ValidationError>) {
    let mut errors = Vec::new();
    let mut design_id: Option<String> = None;
    let mut coverage_target: Option<f64> = None;
    let mut sections: Vec<(&'static str, Vec<(usize, &str)>)> = Vec::new();
    let mut current: Option<usize> = None;

    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        let trimmed = line.trim();
        if trimmed.starts_with('[') && trimmed.ends_with(']') && !trimmed.contains(' ') {
            let name = &trimmed[1..trimmed.len() - 1];
            match SECTIONS.iter().find(|s| **s == name) {
                Some(known) if sections.iter().any(|(n, _)| n == known) => {
                    errors.push(ValidationError::Malformed {
                        line: lineno,
                        reason: format!("section `{name}` appears twice"),
                    });
                    current = None;
                }
                Some(known) => {
                    sections.push((known, Vec::new()));
                    current = Some(sections.len() - 1);
                }
                None => {
                    errors.push(ValidationError::Malformed {
                        line: lineno,
                        reason: format!("unknown section `{name}`"),
                    });
                    current = None;
                }
            }
            continue;
        }
        match current {
            Some(i) => sections[i].1.push((lineno, line)),
            None if sections.is_empty() => {
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = trimmed.split_once(':') else {
                    errors.push(ValidationError::Malformed {
                        line: lineno,
                        reason: "expected `key: value` header line".into(),
                    });
                    continue;
                };
                let (key, value) = (key.trim(), value.trim());
                match key {
                    "design_id" => design_id = Some(value.to_string()),
                    "coverage_target_pct" => match value.parse::<f64>() {
                        Ok(v) => coverage_target = Some(v),
                        Err(_) => errors.push(ValidationError::Malformed {
                            line: lineno,
                            reason: format!("coverage_target_pct `{value}` is not a number"),
                        }),
                    },
                    other => errors.push(ValidationError::Malformed {
                        line: lineno,
                        reason: format!("unknown header key `{other}`"),
                    }),
                }
            }
            // lines after an unknown or duplicated section header are skipped
            None => {}
        }
    }

    let design_id = match design_id {
        Some(id) if !id.is_empty() => id,
        Some(_) => {
            errors.push(ValidationError::Empty("design_id".into()));
            String::new()
        }
        None => {
            errors.push(ValidationError::MissingSection("design_id".into()));
            String::new()
        }
    };
    let coverage_target_pct = coverage_target.unwrap_or(DEFAULT_COVERAGE_TARGET);
    if !is_percentage(coverage_target_pct) {
        errors.push(ValidationError::TargetOutOfRange("coverage_target_pct".into()));
    }

    let body = |name: &str| {
        sections
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, lines)| lines.as_slice())
    };

    let requirements = match body("requirements") {
        None => {
            errors.push(ValidationError::MissingSection("requirements".into()));
            Vec::new()
        }
        Some(lines) => {
            let blocks = requirement_blocks(lines);
            if blocks.is_empty() {
                errors.push(ValidationError::MissingSection("requirements".into()));
            }
            blocks
        }
    };

    let interfaces = match body("interfaces") {
        None => {
            errors.push(ValidationError::MissingSection("interfaces".into()));
            Vec::new()
        }
        Some(lines) => {
            let ports = parse_ports(lines, &mut errors);
            if ports.is_empty() && !errors.iter().any(|e| matches!(e, ValidationError::InvalidWidth(_))) {
                errors.push(ValidationError::MissingSection("interfaces".into()));
            }
            ports
        }
    };

    let performance_targets = match body("performance") {
        None => {
            errors.push(ValidationError::MissingSection("performance".into()));
            Vec::new()
        }
        Some(lines) => parse_performance(lines, &mut errors),
    };

    let fsm_details = match body("fsm") {
        None => {
            errors.push(ValidationError::MissingSection("fsm".into()));
            Vec::new()
        }
        Some(lines) => parse_fsm(lines, &mut errors),
    };

    (
        DesignSpecification {
            design_id,
            requirements,
            interfaces,
            performance_targets,
            fsm_details,
            coverage_target_pct,
        },
        errors,
    )
}

fn requirement_blocks(lines: &[(usize, &str)]) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for (_, line) in lines {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line.trim_end());
        }
    }
    if !current.is_empty() {
        blocks.push(current.join("\n"));
    }
    blocks
}

fn content_lines<'a>(lines: &'a [(usize, &'a str)]) -> impl Iterator<Item = (usize, &'a str)> + 'a {
    lines
        .iter()
        .map(|(n, l)| (*n, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_ports(lines: &[(usize, &str)], errors: &mut Vec<ValidationError>) -> Vec<PortDef> {
    let mut ports = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in content_lines(lines) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            errors.push(ValidationError::Malformed {
                line: lineno,
                reason: "interface lines are `name dir width`".into(),
            });
            continue;
        }
        let name = tokens[0];
        if !is_identifier(name) {
            errors.push(ValidationError::Malformed {
                line: lineno,
                reason: format!("`{name}` is not a port identifier"),
            });
            continue;
        }
        let direction = match tokens[1] {
            "in" => PortDirection::In,
            "out" => PortDirection::Out,
            "inout" => PortDirection::Inout,
            other => {
                errors.push(ValidationError::Malformed {
                    line: lineno,
                    reason: format!("unknown port direction `{other}`"),
                });
                continue;
            }
        };
        let width = match tokens[2].parse::<u32>() {
            Ok(w) if w >= 1 => w,
            _ => {
                errors.push(ValidationError::InvalidWidth(name.to_string()));
                continue;
            }
        };
        if !seen.insert(name.to_string()) {
            errors.push(ValidationError::DuplicatePort(name.to_string()));
            continue;
        }
        ports.push(PortDef {
            name: name.to_string(),
            direction,
            width,
        });
    }
    ports
}

fn parse_performance(lines: &[(usize, &str)], errors: &mut Vec<ValidationError>) -> Vec<PerformanceTarget> {
    let mut targets = Vec::new();
    for (lineno, line) in content_lines(lines) {
        let mut tokens = line.split_whitespace();
        let (Some(name), Some(value)) = (tokens.next(), tokens.next()) else {
            errors.push(ValidationError::Malformed {
                line: lineno,
                reason: "performance lines are `name value [unit]`".into(),
            });
            continue;
        };
        let Ok(value) = value.parse::<f64>() else {
            errors.push(ValidationError::Malformed {
                line: lineno,
                reason: format!("performance value `{value}` is not a number"),
            });
            continue;
        };
        targets.push(PerformanceTarget {
            name: name.to_string(),
            value,
            unit: tokens.collect::<Vec<_>>().join(" "),
        });
    }
    targets
}

fn parse_fsm(lines: &[(usize, &str)], errors: &mut Vec<ValidationError>) -> Vec<FsmState> {
    let mut states = Vec::new();
    for (lineno, line) in content_lines(lines) {
        match line.split_once(':') {
            Some((name, transitions)) if !name.trim().is_empty() => states.push(FsmState {
                name: name.trim().to_string(),
                transitions: transitions.trim().to_string(),
            }),
            _ => errors.push(ValidationError::Malformed {
                line: lineno,
                reason: "fsm lines are `STATE: transitions`".into(),
            }),
        }
    }
    states
}

/// Renders a specification back into the document format.
pub fn render_specification(spec: &DesignSpecification) -> String {
    let mut out = format!(
        "design_id: {}\ncoverage_target_pct: {}\n\n[requirements]\n{}\n\n[interfaces]\n{}\n\n[performance]\n",
        spec.design_id,
        spec.coverage_target_pct,
        spec.requirements.join("\n\n"),
        spec.interfaces_text(),
    );
    let perf = spec.performance_text();
    if !perf.is_empty() {
        out.push_str(&perf);
        out.push('\n');
    }
    out.push_str("\n[fsm]\n");
    let fsm = spec.fsm_text();
    if !fsm.is_empty() {
        out.push_str(&fsm);
        out.push('\n');
    }
    out
}
