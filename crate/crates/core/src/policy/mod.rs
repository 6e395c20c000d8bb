//! Model-backed roles: the generator proposes an action, the judger decides
//! whether an executed action helps the task, and the reflector rewrites a
//! rejected action. Implementations are deterministic mocks (see [`mock`]) or
//! remote backends speaking the line protocol in [`remote`].

pub mod mock;
pub mod prompt;
pub mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, Candidate};
use crate::page::{Page, Task};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("unparseable policy response {raw:?}: {reason}")]
    UnparseableResponse { raw: String, reason: String },
    #[error("no unattempted action remains")]
    ExhaustedActionSpace,
}

/// Everything a role sees when it is invoked for one step of one task.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub task: &'a Task,
    pub page: &'a Page,
    /// Empty when the environment exposes no action spaces.
    pub action_space: &'a [Action],
    /// Actions adopted at earlier steps.
    pub history: &'a [Candidate],
    /// Rejected attempts at this step; empty for generation.
    pub attempts: &'a [Candidate],
    /// Result of executing the latest attempt (judge and reflect calls).
    pub outcome_page: Option<&'a Page>,
    /// Root of the keyed random streams used by stochastic mocks.
    pub seed: u64,
}

impl PolicyContext<'_> {
    pub fn step(&self) -> usize {
        self.history.len()
    }

    pub fn golden(&self) -> &Action {
        self.task.golden_at(self.step())
    }

    pub fn was_attempted(&self, action: &Action) -> bool {
        self.attempts.iter().any(|c| c.action() == Some(action))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgerVerdict {
    pub helpful: bool,
    /// Probability mass on "helpful".
    pub confidence: f64,
}

impl JudgerVerdict {
    pub const DECISION_THRESHOLD: f64 = 0.5;

    pub fn from_confidence(confidence: f64) -> Self {
        let confidence = confidence.clamp(0.0, 1.0);
        Self {
            helpful: confidence >= Self::DECISION_THRESHOLD,
            confidence,
        }
    }

    pub fn hard(helpful: bool) -> Self {
        Self::from_confidence(if helpful { 1.0 } else { 0.0 })
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError>;
}

pub trait Judger: Send + Sync {
    fn judge(&self, ctx: &PolicyContext<'_>, candidate: &Action) -> Result<JudgerVerdict, PolicyError>;
}

pub trait Reflector: Send + Sync {
    fn reflect(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError>;
}

/// The three roles wired into one agent.
#[derive(Clone)]
pub struct Policies {
    pub generator: Arc<dyn Generator>,
    pub judger: Arc<dyn Judger>,
    pub reflector: Arc<dyn Reflector>,
}

impl Policies {
    pub fn new(
        generator: impl Generator + 'static,
        judger: impl Judger + 'static,
        reflector: impl Reflector + 'static,
    ) -> Self {
        Self {
            generator: Arc::new(generator),
            judger: Arc::new(judger),
            reflector: Arc::new(reflector),
        }
    }
}

impl std::fmt::Debug for Policies {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Policies { .. }")
    }
}
