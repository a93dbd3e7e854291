//! Agent roles, critiques, response parsing, and the deliberation engine.

mod critique;
mod deliberation;
mod parse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bus::TopicKind;
use crate::model::{AgentId, RunConfig};

pub use critique::{duplicate_bodies, parse_critique, scan_placeholders, CritiqueResult, Issue, IssueKind, Verdict};
pub use deliberation::{run_deliberation, DeliberationOutcome, DeliberationResult, DeliberationTask, Session};
pub use parse::{extract_block, parse_microarchitecture, parse_rtl, parse_sva, parse_vplan, ParsedProperty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleId {
    DesignLead,
    VerificationLead,
    RtlAgent,
    FormalAgent,
    Critic,
    Conversable,
    CodeExecutor,
    CoverageAgent,
    LrmExpert,
}

impl RoleId {
    pub const ALL: [RoleId; 9] = [
        RoleId::DesignLead,
        RoleId::VerificationLead,
        RoleId::RtlAgent,
        RoleId::FormalAgent,
        RoleId::Critic,
        RoleId::Conversable,
        RoleId::CodeExecutor,
        RoleId::CoverageAgent,
        RoleId::LrmExpert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleId::DesignLead => "design-lead",
            RoleId::VerificationLead => "verification-lead",
            RoleId::RtlAgent => "rtl-agent",
            RoleId::FormalAgent => "formal-agent",
            RoleId::Critic => "critic",
            RoleId::Conversable => "conversable",
            RoleId::CodeExecutor => "code-executor",
            RoleId::CoverageAgent => "coverage-agent",
            RoleId::LrmExpert => "lrm-expert",
        }
    }

    /// Prompt template, for roles that call a completion backend.
    pub fn template_id(self) -> Option<&'static str> {
        match self {
            RoleId::Conversable | RoleId::CodeExecutor => None,
            other => Some(other.as_str()),
        }
    }

    /// The agent id of the first (or only) instance of this role.
    pub fn agent(self) -> AgentId {
        AgentId::from(self.as_str())
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoleId::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

/// Role of an agent id, ignoring an instance suffix such as `-2`.
pub fn role_of(agent: &AgentId) -> Option<RoleId> {
    let id = agent.as_str();
    if let Ok(role) = id.parse() {
        return Some(role);
    }
    let (base, suffix) = id.rsplit_once('-')?;
    if suffix.chars().all(|c| c.is_ascii_digit()) && !suffix.is_empty() {
        base.parse().ok()
    } else {
        None
    }
}

/// One participant of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRole {
    pub agent_id: AgentId,
    pub role_id: RoleId,
    pub template_id: Option<String>,
    pub subscriptions: Vec<TopicKind>,
}

impl AgentRole {
    fn new(agent_id: AgentId, role_id: RoleId) -> Self {
        let mut subscriptions = vec![TopicKind::Groupchat];
        match role_id {
            RoleId::CodeExecutor => subscriptions.push(TopicKind::Tool),
            RoleId::Conversable => subscriptions.push(TopicKind::Hitl),
            _ => {}
        }
        Self {
            agent_id,
            role_id,
            template_id: role_id.template_id().map(str::to_string),
            subscriptions,
        }
    }
}

/// Every agent of a run: one of each role, `critic_count` critics, and the
/// language-reference expert when enabled.
pub fn roster(config: &RunConfig) -> Vec<AgentRole> {
    let mut agents = Vec::new();
    for role in RoleId::ALL {
        match role {
            RoleId::Critic => {
                for n in 1..=config.critic_count.max(1) {
                    agents.push(AgentRole::new(critic_id(n), role));
                }
            }
            RoleId::LrmExpert if !config.lrm_expert => {}
            _ => agents.push(AgentRole::new(role.agent(), role)),
        }
    }
    agents
}

pub fn critic_id(n: u32) -> AgentId {
    if n <= 1 {
        RoleId::Critic.agent()
    } else {
        AgentId::new(format!("critic-{n}"))
    }
}

/// Reviewers for a deliberation: the critics, then the optional expert.
pub fn reviewers(config: &RunConfig) -> Vec<AgentId> {
    let mut out: Vec<AgentId> = (1..=config.critic_count.max(1)).map(critic_id).collect();
    if config.lrm_expert {
        out.push(RoleId::LrmExpert.agent());
    }
    out
}
