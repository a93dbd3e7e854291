//! Completion API over hot-swappable backends.

mod http;
mod mock;
mod prompt;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::RoleId;
use crate::model::{BackendId, Phase};

pub use http::{HttpBackend, BACKEND_KEY_ENV};
pub use mock::{IterationRange, ScriptEntry, ScriptedMock};
pub use prompt::{placeholders, render_prompt, template_text, PromptContext, TEMPLATE_IDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemperatureBucket {
    Low,
    Mid,
    High,
}

impl TemperatureBucket {
    /// `[0, 0.35)` low, `[0.35, 0.65)` mid, `[0.65, 2]` high.
    pub fn of(temperature: f64) -> Self {
        if temperature < 0.35 {
            TemperatureBucket::Low
        } else if temperature < 0.65 {
            TemperatureBucket::Mid
        } else {
            TemperatureBucket::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemperatureBucket::Low => "low",
            TemperatureBucket::Mid => "mid",
            TemperatureBucket::High => "high",
        }
    }
}

/// Where in a run a completion was requested.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextKey {
    pub design_id: String,
    pub phase: Phase,
    pub task_id: String,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role_id: RoleId,
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub context: ContextKey,
}

impl CompletionRequest {
    /// Human-readable script key, used in miss reports.
    pub fn key_string(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}/{}",
            self.role_id,
            self.context.design_id,
            self.context.phase,
            self.context.task_id,
            self.context.iteration,
            TemperatureBucket::of(self.temperature).as_str()
        )
    }
}

/// Token counts when the backend reports them (zero otherwise) and the
/// temperature the request was made at.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UsageRecord {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("unknown backend `{0}`")]
    UnknownBackend(BackendId),
    #[error("backend `{0}` is already registered")]
    DuplicateBackend(BackendId),
    #[error("no script entry for {0}")]
    ScriptMiss(String),
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("missing placeholder `{0}`")]
    MissingPlaceholder(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("backend `{0}` is a scripted mock and needs a scenario")]
    MockNeedsScenario(BackendId),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError>;
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for Arc<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        (**self).complete(req)
    }
}

impl<T: CompletionBackend + ?Sized> CompletionBackend for Box<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        (**self).complete(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpOpenaiCompatible,
    ScriptedMock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: BackendId,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
}

impl BackendDescriptor {
    pub fn scripted_mock(id: &str) -> Self {
        Self {
            backend_id: BackendId::from(id),
            kind: BackendKind::ScriptedMock,
            endpoint: None,
            model_name: None,
        }
    }
}

/// Registered backends, shared by every run of a process.
#[derive(Debug, Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<BackendId, BackendDescriptor>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry with a scripted mock registered as `mock`.
    pub fn with_mock() -> Self {
        let mut reg = Self::new();
        reg.register(BackendDescriptor::scripted_mock("mock"))
            .expect("fresh registry");
        reg
    }

    pub fn register(&mut self, desc: BackendDescriptor) -> Result<BackendId, LlmError> {
        if self.backends.contains_key(&desc.backend_id) {
            return Err(LlmError::DuplicateBackend(desc.backend_id));
        }
        let id = desc.backend_id.clone();
        self.backends.insert(id.clone(), desc);
        Ok(id)
    }

    pub fn get(&self, id: &BackendId) -> Result<&BackendDescriptor, LlmError> {
        self.backends
            .get(id)
            .ok_or_else(|| LlmError::UnknownBackend(id.clone()))
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &BackendDescriptor> {
        self.backends.values()
    }

    /// Builds a backend instance for one run. Scripted mocks take their
    /// scripts from the run's scenario.
    pub fn instantiate(
        &self,
        id: &BackendId,
        scripts: Option<&[ScriptEntry]>,
    ) -> Result<Box<dyn CompletionBackend>, LlmError> {
        let desc = self.get(id)?;
        match desc.kind {
            BackendKind::ScriptedMock => {
                let scripts = scripts.ok_or_else(|| LlmError::MockNeedsScenario(id.clone()))?;
                Ok(Box::new(ScriptedMock::new(scripts.to_vec())))
            }
            BackendKind::HttpOpenaiCompatible => Ok(Box::new(HttpBackend::from_descriptor(desc)?)),
        }
    }
}

impl fmt::Display for TemperatureBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
