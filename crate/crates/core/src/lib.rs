//! Event-driven multi-agent orchestration for RTL design and formal
//! verification.
//!
//! A run turns a [`model::DesignSpecification`] into lint-clean RTL and a
//! proven property set. Agents talk on a turn-taking group chat
//! ([`bus`]), call completion backends through [`llm`], drive EDA tools
//! through [`tooling`], and escalate stuck loops to humans ([`hitl`]). The
//! run itself is an event-sourced state machine ([`workflow`]); every
//! evaluation number is derived from its log ([`metrics`]).

pub mod agents;
pub mod bus;
pub mod hitl;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod tooling;
pub mod workflow;

pub use model::{canonical_hash, Digest};
