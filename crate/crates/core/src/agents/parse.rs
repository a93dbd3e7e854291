//! Typed values from untrusted completion text, via fenced blocks.

use crate::model::{Microarchitecture, VerificationPlan};

/// Body of the first fenced block tagged `tag`, e.g. ```` ```vplan ````.
pub fn extract_block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let fence = format!("```{tag}");
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        if line.trim_end() == fence && (start == 0 || text[..start].ends_with('\n')) {
            let body_start = offset;
            let mut pos = body_start;
            for body_line in text[body_start..].split_inclusive('\n') {
                if body_line.trim_end() == "```" {
                    return Some(text[body_start..pos].trim_end_matches(['\n', '\r']));
                }
                pos += body_line.len();
            }
            return None;
        }
    }
    None
}

pub fn parse_microarchitecture(text: &str) -> Result<Microarchitecture, String> {
    let block = extract_block(text, "microarchitecture").ok_or("no ```microarchitecture block")?;
    let arch: Microarchitecture = serde_json::from_str(block).map_err(|e| format!("microarchitecture JSON: {e}"))?;
    arch.validate()?;
    Ok(arch)
}

pub fn parse_vplan(text: &str) -> Result<VerificationPlan, String> {
    let block = extract_block(text, "vplan").ok_or("no ```vplan block")?;
    let plan: VerificationPlan = serde_json::from_str(block).map_err(|e| format!("vplan JSON: {e}"))?;
    plan.validate()?;
    Ok(plan)
}

pub fn parse_rtl(text: &str) -> Result<String, String> {
    let block = extract_block(text, "systemverilog").ok_or("no ```systemverilog block")?;
    if block.trim().is_empty() {
        return Err("empty ```systemverilog block".into());
    }
    Ok(block.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedProperty {
    pub entry_id: String,
    pub body: String,
}

/// One property per non-blank line of an ```sva block. `// ...` lines are
/// comments; a leading `[entry]` reassigns the line to another plan entry.
pub fn parse_sva(text: &str, default_entry: &str) -> Result<Vec<ParsedProperty>, String> {
    let block = extract_block(text, "sva").ok_or("no ```sva block")?;
    let mut out = Vec::new();
    for line in block.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        let (entry_id, body) = match line.strip_prefix('[').and_then(|rest| rest.split_once(']')) {
            Some((entry, body)) => (entry.trim().to_string(), body.trim()),
            None => (default_entry.to_string(), line),
        };
        if body.is_empty() || entry_id.is_empty() {
            return Err(format!("malformed property line `{line}`"));
        }
        out.push(ParsedProperty {
            entry_id,
            body: body.to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ResetStrategy;

    #[test]
    fn block_extraction() {
        let text = "Here you go:\n```systemverilog\nmodule crc;\nendmodule\n```\ntrailing";
        assert_eq!(extract_block(text, "systemverilog"), Some("module crc;\nendmodule"));
        assert_eq!(extract_block(text, "sva"), None);
        assert_eq!(extract_block("```sva\nunterminated", "sva"), None);
        assert_eq!(extract_block("inline ```sva\nx\n```", "sva"), None);
    }

    #[test]
    fn microarchitecture_parses() {
        let text = r#"```microarchitecture
{"datapath_components": [{"name": "crc_core", "role": "LFSR update"}],
 "control_fsms": [{"name": "ctrl", "states": ["IDLE", "CALC"]}],
 "reset_strategy": "sync-active-low"}
```"#;
        let arch = parse_microarchitecture(text).unwrap();
        assert_eq!(arch.reset_strategy, ResetStrategy::SyncActiveLow);
        assert_eq!(arch.datapath_components.len(), 1);
        assert!(parse_microarchitecture("I think we need an LFSR.").is_err());
        let empty = "```microarchitecture\n{\"datapath_components\": [], \"reset_strategy\": \"sync-active-low\"}\n```";
        assert!(parse_microarchitecture(empty).is_err());
    }

    #[test]
    fn vplan_rejects_empty_intent() {
        let text = r#"```vplan
{"entries": [{"entry_id": "p1", "property_type": "safety", "intent": " "}]}
```"#;
        assert!(parse_vplan(text).unwrap_err().contains("empty intent"));
    }

    #[test]
    fn sva_lines_and_entry_prefix() {
        let text =
            "```sva\n// reset\nrst |-> crc_out == 16'hFFFF\n[p2] data_valid |=> crc_out != $past(crc_out)\n\n```";
        let props = parse_sva(text, "p1").unwrap();
        assert_eq!(props.len(), 2);
        assert_eq!(props[0].entry_id, "p1");
        assert_eq!(props[1].entry_id, "p2");
        assert_eq!(props[1].body, "data_valid |=> crc_out != $past(crc_out)");
    }
}
