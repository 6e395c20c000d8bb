//! Backtracking GUI agent: action grammar, environments, verifier, policy
//! roles, the backtrack loop, and the metrics, datasets and rewards built on
//! top of its episodes.

pub mod action;
pub mod agent;
pub mod dataset;
pub mod environment;
pub mod fixtures;
pub mod matching;
pub mod metrics;
pub mod page;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod text;
pub mod verifier;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use action::{iou, parse_action, Action, ActionKind, BoundingBox, Candidate, Direction, MalformedAction};
pub use agent::{run_episode, run_suite, Episode, LoopConfig, LoopError, StepRecord, Terminal};
pub use environment::{EnvError, Environment, EnvironmentGraph, ExecutionMode, ExecutionOutcome};
pub use matching::{step_matches, MatchConfig, StepMatch};
pub use page::{Page, Task, Trajectory};
pub use policy::{Generator, Judger, JudgerVerdict, Policies, PolicyContext, PolicyError, Reflector};
pub use verifier::{verify, RuleFailure, VerifierVerdict};
