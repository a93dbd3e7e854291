//! The Group Chat Manager's speaker selection.
//!
//! Selection is a pure function of the transcript prefix. Inside an open
//! floor the turn cycles through the floor's participants in order, starting
//! from the first; with no floor open it rotates through the phase roster.

use std::collections::BTreeMap;

use super::{BusError, EventRecord};
use crate::model::{AgentId, Phase};
use crate::workflow::RunEvent;

/// Sender id used for lifecycle events emitted by the manager itself.
pub const CHAT_MANAGER: &str = "chat-manager";

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerPolicy {
    pub rosters: BTreeMap<Phase, Vec<AgentId>>,
}

impl Default for SpeakerPolicy {
    fn default() -> Self {
        let ids = |names: &[&str]| names.iter().map(|n| AgentId::from(*n)).collect::<Vec<_>>();
        let mut rosters = BTreeMap::new();
        rosters.insert(Phase::Planning, ids(&["design-lead", "verification-lead", "critic"]));
        rosters.insert(Phase::Development, ids(&["rtl-agent", "formal-agent", "critic"]));
        rosters.insert(
            Phase::Execution,
            ids(&["code-executor", "rtl-agent", "formal-agent", "critic", "coverage-agent"]),
        );
        Self { rosters }
    }
}

pub fn select_next_speaker(
    transcript: &[EventRecord],
    phase: Phase,
    policy: &SpeakerPolicy,
) -> Result<AgentId, BusError> {
    if phase == Phase::BlockedHitl || phase.is_terminal() {
        return Err(BusError::NoEligibleSpeaker);
    }

    let floor_at = transcript
        .iter()
        .rposition(|r| matches!(r.payload, RunEvent::FloorOpened { .. } | RunEvent::FloorClosed));
    if let Some(idx) = floor_at {
        if let RunEvent::FloorOpened { participants } = &transcript[idx].payload {
            let last = last_chat_sender(&transcript[idx + 1..]);
            return next_in(participants, last).ok_or(BusError::NoEligibleSpeaker);
        }
    }

    let roster = policy.rosters.get(&phase).ok_or(BusError::NoEligibleSpeaker)?;
    next_in(roster, last_chat_sender(transcript)).ok_or(BusError::NoEligibleSpeaker)
}

fn last_chat_sender(records: &[EventRecord]) -> Option<&AgentId> {
    records.iter().rev().find_map(|r| match &r.payload {
        RunEvent::Chat(msg) => Some(&msg.sender),
        _ => None,
    })
}

fn next_in(order: &[AgentId], last: Option<&AgentId>) -> Option<AgentId> {
    if order.is_empty() {
        return None;
    }
    let next = match last.and_then(|s| order.iter().position(|a| a == s)) {
        Some(pos) => (pos + 1) % order.len(),
        None => 0,
    };
    Some(order[next].clone())
}
