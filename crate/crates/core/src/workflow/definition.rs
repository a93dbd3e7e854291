//! The workflow a run executes, as data. Its hash goes into `run-created`
//! so two runs can be compared for "same workflow, different backend".

use std::collections::BTreeMap;

use serde::Serialize;

use crate::agents::{roster, RoleId};
use crate::bus::SpeakerPolicy;
use crate::llm::template_text;
use crate::model::{canonical_hash, AgentId, Digest, Phase, RunConfig};

pub const WORKFLOW_VERSION: &str = "tapeloop-workflow/1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleBinding {
    pub agent_id: AgentId,
    pub role_id: RoleId,
    pub template_id: Option<String>,
    /// Digest of the template text, so editing a prompt changes the hash.
    pub template_digest: Option<Digest>,
}

/// Everything that shapes a run except the backend and the sampling
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkflowDefinition {
    pub version: &'static str,
    pub phases: Vec<Phase>,
    pub roles: Vec<RoleBinding>,
    pub rosters: BTreeMap<Phase, Vec<AgentId>>,
    pub iteration_threshold: u32,
    pub loops: Vec<&'static str>,
}

impl WorkflowDefinition {
    pub fn for_config(config: &RunConfig) -> Self {
        let roles = roster(config)
            .into_iter()
            .map(|a| RoleBinding {
                template_digest: a
                    .template_id
                    .as_deref()
                    .and_then(template_text)
                    .map(|t| Digest::of_bytes(t.as_bytes())),
                agent_id: a.agent_id,
                role_id: a.role_id,
                template_id: a.template_id,
            })
            .collect();
        Self {
            version: WORKFLOW_VERSION,
            phases: vec![Phase::Planning, Phase::Development, Phase::Execution, Phase::SignedOff],
            roles,
            rosters: SpeakerPolicy::default().rosters,
            iteration_threshold: config.iteration_threshold,
            loops: vec!["deliberation", "design-check", "cex-repair", "closure"],
        }
    }

    pub fn hash(&self) -> Digest {
        canonical_hash(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_swap_keeps_the_hash() {
        let a = RunConfig::new("crc", "mock", 0.2);
        let mut b = a.clone();
        b.backend_id = crate::model::BackendId::new("gpt-live");
        b.temperature = 0.8;
        b.random_seed = 99;
        assert_eq!(
            WorkflowDefinition::for_config(&a).hash(),
            WorkflowDefinition::for_config(&b).hash()
        );
    }

    #[test]
    fn topology_changes_the_hash() {
        let a = RunConfig::new("crc", "mock", 0.2);
        let mut b = a.clone();
        b.critic_count = 2;
        let mut c = a.clone();
        c.iteration_threshold = 3;
        let h = WorkflowDefinition::for_config(&a).hash();
        assert_ne!(h, WorkflowDefinition::for_config(&b).hash());
        assert_ne!(h, WorkflowDefinition::for_config(&c).hash());
    }
}
