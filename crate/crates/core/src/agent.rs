//! The backtracking agent loop.
//!
//! At every step the generator proposes an action, which is executed and
//! checked by the rule-based verifier and the judger. A rejected attempt
//! goes to the reflector, which sees all attempts made at this step, and the
//! rewrite is executed and checked again. The loop stops at the first
//! accepted attempt or once `max_reflections` rewrites have been spent, in
//! which case the last attempt is adopted anyway. Only adopted actions enter
//! the cross-step history. With a budget of zero nothing can be rewritten, so
//! the judger is not consulted and the loop is plain generation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, Candidate};
use crate::environment::{EnvError, Environment, ExecutionMode, ExecutionOutcome};
use crate::page::{Page, Task, Trajectory, TrajectoryStep};
use crate::policy::mock::{AcceptAllJudger, OracleReflector, ScriptedPolicy};
use crate::policy::{Generator, JudgerVerdict, Policies, PolicyContext, PolicyError};
use crate::verifier::{verify, VerifierVerdict};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("task {task_id}, step {step}: {source}")]
    PolicyFailure {
        task_id: String,
        step: usize,
        #[source]
        source: PolicyError,
    },
    #[error("task {task_id}: {source}")]
    Environment {
        task_id: String,
        #[source]
        source: EnvError,
    },
}

impl LoopError {
    pub fn task_id(&self) -> &str {
        match self {
            LoopError::PolicyFailure { task_id, .. } | LoopError::Environment { task_id, .. } => task_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub max_reflections: usize,
    pub max_steps: usize,
    pub execution_mode: ExecutionMode,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_reflections: 3,
            max_steps: 15,
            execution_mode: ExecutionMode::Actual,
            seed: 0,
        }
    }
}

/// Wall-clock seconds spent per role during one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTimings {
    pub generator: f64,
    pub verifier: f64,
    pub judger: f64,
    pub reflector: f64,
    pub execution: f64,
}

impl StepTimings {
    pub fn total(&self) -> f64 {
        self.generator + self.verifier + self.judger + self.reflector + self.execution
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub candidate: Candidate,
    pub outcome: ExecutionOutcome,
    pub verifier: VerifierVerdict,
    /// Absent when the verifier already rejected the attempt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judger: Option<JudgerVerdict>,
}

impl Attempt {
    pub fn accepted(&self) -> bool {
        self.verifier.valid && self.judger.is_some_and(|j| j.helpful)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub page_before: String,
    pub attempts: Vec<Attempt>,
    pub adopted: Candidate,
    pub adopted_outcome: ExecutionOutcome,
    pub detection_fired: bool,
    pub budget_exhausted: bool,
    /// Kept out of episode records so they stay reproducible; exported
    /// separately through [`Episode::timings`].
    #[serde(skip)]
    pub timings: StepTimings,
}

impl StepRecord {
    pub fn first_attempt(&self) -> &Attempt {
        &self.attempts[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    Completed,
    MaxSteps,
    DeadEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task_id: String,
    pub execution_mode: ExecutionMode,
    pub steps: Vec<StepRecord>,
    pub terminal: Terminal,
    pub trajectory: Trajectory,
}

impl Episode {
    pub fn adopted_actions(&self) -> impl Iterator<Item = &Candidate> {
        self.steps.iter().map(|s| &s.adopted)
    }

    pub fn timings(&self) -> Vec<StepTimings> {
        self.steps.iter().map(|s| s.timings).collect()
    }

    pub fn attach_timings(&mut self, timings: &[StepTimings]) {
        for (s, t) in self.steps.iter_mut().zip(timings) {
            s.timings = *t;
        }
    }

    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("episode serializes")
    }
}

/// Per-episode timing sidecar record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTimings {
    pub task_id: String,
    pub steps: Vec<StepTimings>,
}

fn policy_err(task: &Task, step: usize) -> impl FnOnce(PolicyError) -> LoopError + '_ {
    move |source| LoopError::PolicyFailure {
        task_id: task.task_id.clone(),
        step,
        source,
    }
}

fn env_err(task: &Task) -> impl FnOnce(EnvError) -> LoopError + '_ {
    move |source| LoopError::Environment {
        task_id: task.task_id.clone(),
        source,
    }
}

/// Generator and reflector outputs that fail to parse become malformed
/// candidates; other policy errors abort the step.
fn as_candidate(r: Result<Action, PolicyError>) -> Result<Candidate, PolicyError> {
    match r {
        Ok(a) => Ok(Candidate::Action(a)),
        Err(PolicyError::UnparseableResponse { raw, reason }) => Ok(Candidate::Malformed { raw, reason }),
        Err(e) => Err(e),
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed().as_secs_f64();
    out
}

struct StepInput<'a> {
    task: &'a Task,
    step: usize,
    page: &'a Page,
    history: &'a [Candidate],
}

fn execute(
    env: &Environment,
    input: &StepInput<'_>,
    candidate: &Candidate,
    mode: ExecutionMode,
) -> Result<ExecutionOutcome, LoopError> {
    let Some(action) = candidate.action() else {
        return Ok(ExecutionOutcome::unchanged(input.page, mode));
    };
    match env.execute(input.task, input.step, input.page, action, mode) {
        Ok(o) => Ok(o),
        Err(EnvError::InvalidAction { .. }) => Ok(ExecutionOutcome::unchanged(input.page, mode)),
        Err(e) => Err(env_err(input.task)(e)),
    }
}

fn run_step_inner(
    env: &Environment,
    policies: &Policies,
    cfg: &LoopConfig,
    input: &StepInput<'_>,
) -> Result<StepRecord, LoopError> {
    let task = input.task;
    let space: &[Action] = if env.has_action_spaces() {
        &input.page.action_space
    } else {
        &[]
    };
    fn ctx<'a>(
        input: &StepInput<'a>,
        space: &'a [Action],
        attempts: &'a [Candidate],
        outcome_page: Option<&'a Page>,
        seed: u64,
    ) -> PolicyContext<'a> {
        PolicyContext {
            task: input.task,
            page: input.page,
            action_space: space,
            history: input.history,
            attempts,
            outcome_page,
            seed,
        }
    }
    let mut timings = StepTimings::default();
    let mut attempts: Vec<Attempt> = Vec::new();
    let mut tried: Vec<Candidate> = Vec::new();
    let mut budget_exhausted = false;

    let first = timed(&mut timings.generator, || {
        policies.generator.generate(&ctx(input, space, &[], None, cfg.seed))
    });
    let mut candidate = as_candidate(first).map_err(policy_err(task, input.step))?;

    for round in 0..=cfg.max_reflections {
        let outcome = timed(&mut timings.execution, || {
            execute(env, input, &candidate, cfg.execution_mode)
        })?;
        let verdict = timed(&mut timings.verifier, || {
            verify(input.page, &outcome.next_page, &candidate, env.graph())
        });
        let backtracking = cfg.max_reflections > 0;
        let judged = match (backtracking && verdict.valid, candidate.action()) {
            (true, Some(action)) => {
                let c = ctx(input, space, &tried, Some(&outcome.next_page), cfg.seed);
                let v = timed(&mut timings.judger, || policies.judger.judge(&c, action));
                Some(v.map_err(policy_err(task, input.step))?)
            }
            _ => None,
        };
        let attempt = Attempt {
            candidate: candidate.clone(),
            outcome,
            verifier: verdict,
            judger: judged,
        };
        let accepted = attempt.accepted();
        tried.push(candidate.clone());
        attempts.push(attempt);
        if accepted || !backtracking {
            break;
        }
        if round == cfg.max_reflections {
            budget_exhausted = true;
            break;
        }
        let last_page = &attempts.last().expect("just pushed").outcome.next_page;
        let c = ctx(input, space, &tried, Some(last_page), cfg.seed);
        let rewritten = timed(&mut timings.reflector, || policies.reflector.reflect(&c));
        candidate = match as_candidate(rewritten) {
            Ok(c) => c,
            Err(PolicyError::ExhaustedActionSpace) => {
                budget_exhausted = true;
                break;
            }
            Err(e) => return Err(policy_err(task, input.step)(e)),
        };
    }

    let last = attempts.last().expect("at least one attempt");
    let adopted = last.candidate.clone();
    let adopted_outcome = timed(&mut timings.execution, || {
        env.advance(task, input.step, input.page, &adopted, &last.outcome)
    })
    .map_err(env_err(task))?;
    Ok(StepRecord {
        page_before: input.page.page_id.clone(),
        detection_fired: attempts.len() > 1 || budget_exhausted,
        attempts,
        adopted,
        adopted_outcome,
        budget_exhausted,
        timings,
    })
}

/// Run one step from `page` with `history` holding the adopted actions of
/// the previous steps.
pub fn run_step(
    env: &Environment,
    policies: &Policies,
    cfg: &LoopConfig,
    task: &Task,
    page: &Page,
    history: &[Candidate],
) -> Result<StepRecord, LoopError> {
    let input = StepInput {
        task,
        step: history.len(),
        page,
        history,
    };
    run_step_inner(env, policies, cfg, &input)
}

fn drive(
    env: &Environment,
    cfg: &LoopConfig,
    task: &Task,
    mut step_fn: impl FnMut(&Page, &[Candidate]) -> Result<StepRecord, LoopError>,
) -> Result<Episode, LoopError> {
    let mut page = env.start_page(task).map_err(env_err(task))?;
    let mut history: Vec<Candidate> = Vec::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut trajectory = Vec::new();
    let terminal = loop {
        if steps.len() >= cfg.max_steps {
            break Terminal::MaxSteps;
        }
        if env.has_action_spaces() && page.action_space.is_empty() {
            break Terminal::DeadEnd;
        }
        let record = step_fn(&page, &history)?;
        history.push(record.adopted.clone());
        trajectory.push(TrajectoryStep {
            page_id: page.page_id.clone(),
            action: record.adopted.clone(),
        });
        let done = record.adopted.is_complete();
        page = record.adopted_outcome.next_page.clone();
        steps.push(record);
        if done {
            break Terminal::Completed;
        }
    };
    Ok(Episode {
        task_id: task.task_id.clone(),
        execution_mode: cfg.execution_mode,
        steps,
        terminal,
        trajectory: Trajectory {
            steps: trajectory,
            final_page: page.page_id,
        },
    })
}

pub fn run_episode(
    env: &Environment,
    policies: &Policies,
    cfg: &LoopConfig,
    task: &Task,
) -> Result<Episode, LoopError> {
    drive(env, cfg, task, |page, history| {
        run_step(env, policies, cfg, task, page, history)
    })
}

/// Baseline agent: every generated action is adopted as-is. The verifier
/// verdict is recorded for analysis but never acted upon, and no judger or
/// reflector is consulted.
pub fn run_generator_only(
    env: &Environment,
    generator: &dyn Generator,
    cfg: &LoopConfig,
    task: &Task,
) -> Result<Episode, LoopError> {
    drive(env, cfg, task, |page, history| {
        let input = StepInput {
            task,
            step: history.len(),
            page,
            history,
        };
        let space: &[Action] = if env.has_action_spaces() {
            &page.action_space
        } else {
            &[]
        };
        let ctx = PolicyContext {
            task,
            page,
            action_space: space,
            history,
            attempts: &[],
            outcome_page: None,
            seed: cfg.seed,
        };
        let mut timings = StepTimings::default();
        let generated = timed(&mut timings.generator, || generator.generate(&ctx));
        let candidate = as_candidate(generated).map_err(policy_err(task, input.step))?;
        let outcome = timed(&mut timings.execution, || {
            execute(env, &input, &candidate, cfg.execution_mode)
        })?;
        let verdict = verify(page, &outcome.next_page, &candidate, env.graph());
        let adopted_outcome = env
            .advance(task, input.step, page, &candidate, &outcome)
            .map_err(env_err(task))?;
        Ok(StepRecord {
            page_before: page.page_id.clone(),
            attempts: vec![Attempt {
                candidate: candidate.clone(),
                outcome,
                verifier: verdict,
                judger: None,
            }],
            adopted: candidate,
            adopted_outcome,
            detection_fired: false,
            budget_exhausted: false,
            timings,
        })
    })
}

/// Run every task, `parallelism` episodes at a time. Results keep task
/// order and are identical to a sequential run; a failing episode does not
/// abort the others.
pub fn run_suite(
    env: &Environment,
    policies: &Policies,
    cfg: &LoopConfig,
    tasks: &[Task],
    parallelism: usize,
) -> Vec<Result<Episode, LoopError>> {
    let one = |t: &Task| run_episode(env, policies, cfg, t);
    if parallelism <= 1 || tasks.len() <= 1 {
        return tasks.iter().map(one).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| tasks.par_iter().map(one).collect()),
        Err(e) => {
            log::warn!("could not build a {parallelism}-thread pool ({e}); running sequentially");
            tasks.iter().map(one).collect()
        }
    }
}

/// Rebuild an episode from a fixed action sequence: every action is adopted
/// as given, one per step.
pub fn replay(env: &Environment, task: &Task, actions: &[Action], mode: ExecutionMode) -> Result<Episode, LoopError> {
    let policies = Policies::new(
        ScriptedPolicy::from_actions(&task.task_id, actions),
        AcceptAllJudger,
        OracleReflector,
    );
    let cfg = LoopConfig {
        max_reflections: 0,
        max_steps: actions.len(),
        execution_mode: mode,
        seed: 0,
    };
    run_episode(env, &policies, &cfg, task)
}
