//! Topic-based group chat, the append-only event log, and speaker selection.

mod log;
mod manager;
mod replay;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agents::CritiqueResult;
use crate::llm::{ContextKey, UsageRecord};
use crate::model::{AgentId, Digest, RunId, TicketId};
use crate::tooling::ToolKind;

pub use log::{parse_log, read_log, EventLog, EventRecord, Granularity, LogError};
pub use manager::{select_next_speaker, SpeakerPolicy, CHAT_MANAGER};
pub use replay::{replay_log, ReplayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopicKind {
    Groupchat,
    Tool,
    Hitl,
}

impl TopicKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopicKind::Groupchat => "groupchat",
            TopicKind::Tool => "tool",
            TopicKind::Hitl => "hitl",
        }
    }
}

/// A topic name of the form `<kind>:<run_id>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Topic(String);

impl Topic {
    pub fn new(kind: TopicKind, run_id: &RunId) -> Self {
        Topic(format!("{}:{}", kind.as_str(), run_id))
    }

    pub fn groupchat(run_id: &RunId) -> Self {
        Self::new(TopicKind::Groupchat, run_id)
    }

    pub fn tool(run_id: &RunId) -> Self {
        Self::new(TopicKind::Tool, run_id)
    }

    pub fn hitl(run_id: &RunId) -> Self {
        Self::new(TopicKind::Hitl, run_id)
    }

    /// Parses a topic name, rejecting anything not of the documented form.
    pub fn parse(name: &str) -> Option<Self> {
        let (kind, run) = name.split_once(':')?;
        if run.is_empty() || !matches!(kind, "groupchat" | "tool" | "hitl") {
            return None;
        }
        Some(Topic(name.to_string()))
    }

    pub fn kind(&self) -> TopicKind {
        match self.0.split_once(':').map(|(k, _)| k) {
            Some("tool") => TopicKind::Tool,
            Some("hitl") => TopicKind::Hitl,
            _ => TopicKind::Groupchat,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Which backend call produced a message, for iteration bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmTrace {
    pub context: ContextKey,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MessagePayload {
    Text {
        text: String,
    },
    ArtifactRef {
        module: String,
        revision: u32,
    },
    Critique(CritiqueResult),
    ToolReport {
        kind: ToolKind,
        digest: Digest,
        summary: String,
    },
    EscalationRef {
        ticket_id: TicketId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub seq: u64,
    pub sender: AgentId,
    pub topic: Topic,
    pub payload: MessagePayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BusError {
    #[error("`{0}` does not hold the speaking turn")]
    NotYourTurn(AgentId),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("no eligible speaker")]
    NoEligibleSpeaker,
}

/// Outcome of routing one message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    /// Recipients, each exactly once, sender included.
    Delivered(Vec<AgentId>),
    /// The topic exists but nobody subscribes to it.
    DeadLetter,
}

/// Subscriptions and the single speaking turn of one run.
#[derive(Debug, Clone, Default)]
pub struct MessageBus {
    topics: BTreeMap<Topic, BTreeSet<AgentId>>,
    turn: Option<AgentId>,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_topic(&mut self, topic: Topic) {
        self.topics.entry(topic).or_default();
    }

    pub fn subscribe(&mut self, topic: &Topic, agent: AgentId) -> Result<(), BusError> {
        self.topics
            .get_mut(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?
            .insert(agent);
        Ok(())
    }

    pub fn subscribers(&self, topic: &Topic) -> Option<&BTreeSet<AgentId>> {
        self.topics.get(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &Topic> {
        self.topics.keys()
    }

    pub fn grant_turn(&mut self, agent: AgentId) {
        self.turn = Some(agent);
    }

    pub fn release_turn(&mut self) {
        self.turn = None;
    }

    pub fn turn_holder(&self) -> Option<&AgentId> {
        self.turn.as_ref()
    }

    /// Checks the topic and the turn, then returns the recipient list.
    pub fn route_message(&self, msg: &AgentMessage) -> Result<Delivery, BusError> {
        let subscribers = self
            .topics
            .get(&msg.topic)
            .ok_or_else(|| BusError::UnknownTopic(msg.topic.to_string()))?;
        if self.turn.as_ref() != Some(&msg.sender) {
            return Err(BusError::NotYourTurn(msg.sender.clone()));
        }
        if subscribers.is_empty() {
            return Ok(Delivery::DeadLetter);
        }
        Ok(Delivery::Delivered(subscribers.iter().cloned().collect()))
    }
}
