use serde::{Deserialize, Serialize};

use super::{Completion, CompletionBackend, CompletionRequest, LlmError, TemperatureBucket, UsageRecord};
use crate::model::{glob_match, Phase};

/// Inclusive range `[from, to]`; `to = null` leaves it open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRange(pub u32, pub Option<u32>);

impl IterationRange {
    pub const ALL: IterationRange = IterationRange(1, None);

    pub fn exactly(n: u32) -> Self {
        IterationRange(n, Some(n))
    }

    pub fn contains(&self, n: u32) -> bool {
        n >= self.0 && self.1.is_none_or(|to| n <= to)
    }
}

impl Default for IterationRange {
    fn default() -> Self {
        Self::ALL
    }
}

/// One scripted response. Patterns accept `*` wildcards; omitted fields
/// match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role: String,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    #[serde(default)]
    pub iterations: IterationRange,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<TemperatureBucket>,
    pub response: String,
}

impl ScriptEntry {
    pub fn matches(&self, req: &CompletionRequest) -> bool {
        glob_match(&self.role, req.role_id.as_str())
            && glob_match(&self.task, &req.context.task_id)
            && self
                .design
                .as_deref()
                .is_none_or(|d| glob_match(d, &req.context.design_id))
            && self.phase.is_none_or(|p| p == req.context.phase)
            && self.iterations.contains(req.context.iteration)
            && self.bucket.is_none_or(|b| b == TemperatureBucket::of(req.temperature))
    }
}

/// Deterministic backend: the first matching entry answers.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    entries: Vec<ScriptEntry>,
}

impl ScriptedMock {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries }
    }

    pub fn lookup(&self, req: &CompletionRequest) -> Option<&ScriptEntry> {
        self.entries.iter().find(|e| e.matches(req))
    }
}

impl CompletionBackend for ScriptedMock {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        let entry = self.lookup(req).ok_or_else(|| LlmError::ScriptMiss(req.key_string()))?;
        let text = entry
            .response
            .replace("{{task}}", &req.context.task_id)
            .replace("{{iteration}}", &req.context.iteration.to_string())
            .replace("{{design}}", &req.context.design_id);
        Ok(Completion {
            text,
            usage: UsageRecord {
                prompt_tokens: 0,
                completion_tokens: 0,
                temperature: req.temperature,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::RoleId;
    use crate::llm::ContextKey;

    fn req(role: RoleId, task: &str, iteration: u32, temperature: f64) -> CompletionRequest {
        CompletionRequest {
            role_id: role,
            prompt: "p".into(),
            temperature,
            seed: 7,
            context: ContextKey {
                design_id: "ecc".into(),
                phase: Phase::Development,
                task_id: task.into(),
                iteration,
            },
        }
    }

    fn entry(task: &str, iterations: IterationRange, bucket: Option<TemperatureBucket>, response: &str) -> ScriptEntry {
        ScriptEntry {
            role: "rtl-agent".into(),
            task: task.into(),
            design: Some("ecc".into()),
            phase: None,
            iterations,
            bucket,
            response: response.into(),
        }
    }

    #[test]
    fn first_match_wins_and_buckets_split() {
        let mock = ScriptedMock::new(vec![
            entry(
                "block:*",
                IterationRange::exactly(1),
                Some(TemperatureBucket::Low),
                "low stub",
            ),
            entry("block:*", IterationRange::ALL, None, "generic"),
        ]);
        assert_eq!(
            mock.complete(&req(RoleId::RtlAgent, "block:ecc_enc", 1, 0.2))
                .unwrap()
                .text,
            "low stub"
        );
        assert_eq!(
            mock.complete(&req(RoleId::RtlAgent, "block:ecc_enc", 1, 0.8))
                .unwrap()
                .text,
            "generic"
        );
        assert_eq!(
            mock.complete(&req(RoleId::RtlAgent, "block:ecc_enc", 2, 0.2))
                .unwrap()
                .text,
            "generic"
        );
    }

    #[test]
    fn miss_names_the_key() {
        let mock = ScriptedMock::new(vec![entry("block:*", IterationRange(1, Some(2)), None, "x")]);
        assert_eq!(
            mock.complete(&req(RoleId::RtlAgent, "block:ecc_enc", 3, 0.5)),
            Err(LlmError::ScriptMiss(
                "rtl-agent/ecc/development/block:ecc_enc/3/mid".into()
            ))
        );
    }

    #[test]
    fn identical_requests_identical_responses() {
        let mock = ScriptedMock::new(vec![entry(
            "*",
            IterationRange::ALL,
            None,
            "fix {{task}} #{{iteration}}",
        )]);
        let r = req(RoleId::RtlAgent, "check:ecc_dec", 4, 0.5);
        let a = mock.complete(&r).unwrap();
        assert_eq!(a, mock.complete(&r).unwrap());
        assert_eq!(a.text, "fix check:ecc_dec #4");
        assert_eq!(a.usage.temperature, 0.5);
    }

    #[test]
    fn iteration_range_serializes_as_pair() {
        assert_eq!(serde_json::to_string(&IterationRange(6, None)).unwrap(), "[6,null]");
        let r: IterationRange = serde_json::from_str("[2,4]").unwrap();
        assert!(r.contains(4) && !r.contains(5));
    }
}
