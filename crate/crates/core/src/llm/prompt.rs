//! Role prompt templates with `{{name}}` placeholders.

use std::collections::BTreeMap;

use super::LlmError;

pub type PromptContext = BTreeMap<String, String>;

pub const TEMPLATE_IDS: [&str; 7] = [
    "design-lead",
    "verification-lead",
    "rtl-agent",
    "formal-agent",
    "critic",
    "coverage-agent",
    "lrm-expert",
];

pub fn template_text(template_id: &str) -> Option<&'static str> {
    Some(match template_id {
        "design-lead" => include_str!("../../templates/design-lead.txt"),
        "verification-lead" => include_str!("../../templates/verification-lead.txt"),
        "rtl-agent" => include_str!("../../templates/rtl-agent.txt"),
        "formal-agent" => include_str!("../../templates/formal-agent.txt"),
        "critic" => include_str!("../../templates/critic.txt"),
        "coverage-agent" => include_str!("../../templates/coverage-agent.txt"),
        "lrm-expert" => include_str!("../../templates/lrm-expert.txt"),
        _ => return None,
    })
}

/// Substitutes every placeholder; a placeholder absent from `ctx` is an error.
pub fn render_prompt(template_id: &str, ctx: &PromptContext) -> Result<String, LlmError> {
    let template = template_text(template_id).ok_or_else(|| LlmError::UnknownTemplate(template_id.to_string()))?;
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let Some(close) = rest[open + 2..].find("}}") else {
            break;
        };
        out.push_str(&rest[..open]);
        let name = rest[open + 2..open + 2 + close].trim();
        let value = ctx
            .get(name)
            .ok_or_else(|| LlmError::MissingPlaceholder(name.to_string()))?;
        out.push_str(value);
        rest = &rest[open + 2 + close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Placeholder names used by a template, in order of first appearance.
pub fn placeholders(template_id: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    let mut rest = template_text(template_id).unwrap_or_default();
    while let Some(open) = rest.find("{{") {
        let Some(close) = rest[open + 2..].find("}}") else {
            break;
        };
        let name = rest[open + 2..open + 2 + close].trim().to_string();
        if !names.contains(&name) {
            names.push(name);
        }
        rest = &rest[open + 2 + close + 2..];
    }
    names
}
