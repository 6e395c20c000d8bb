//! Judgment and reflection training sets built by regenerating actions along
//! golden trajectories.
//!
//! Each task is walked along its golden path so every step sees the golden
//! page and the golden history. Judgment examples pair the golden action
//! (label 1) and any generated action that misses it on either channel
//! (label 0) with the page the action leads to. Reflection examples list the
//! generated actions judged ineffective at a step and target the golden
//! action; a seeded 20% of steps whose first generation was judged effective
//! become preserve examples that list that action and target it unchanged.
//! Record layout is documented in `docs/dataset-format.md`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{Action, Candidate};
use crate::environment::{EnvError, Environment, ExecutionMode, ExecutionOutcome};
use crate::matching::{step_matches, MatchConfig};
use crate::page::{Page, Task};
use crate::policy::{Generator, Judger, PolicyContext};
use crate::rng::{derive_seed, stream};
use crate::verifier::verify;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub match_cfg: MatchConfig,
    /// Generations per step when building reflection examples.
    pub regenerations: usize,
    pub preserve_rate: f64,
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            match_cfg: MatchConfig::default(),
            regenerations: 3,
            preserve_rate: 0.2,
            parallelism: 1,
            seed: 0,
        }
    }
}

/// Where a step's golden path stands before the step is taken.
#[derive(Debug, Clone)]
struct GoldenStep {
    page: Page,
    action_space: Vec<Action>,
    history: Vec<Candidate>,
}

fn golden_walk(env: &Environment, task: &Task) -> Result<Vec<GoldenStep>, EnvError> {
    let mut page = env.start_page(task)?;
    let mut out = Vec::with_capacity(task.golden_actions.len());
    let mut history: Vec<Candidate> = Vec::new();
    for (i, g) in task.golden_actions.iter().enumerate() {
        let action_space = if env.has_action_spaces() {
            page.action_space.clone()
        } else {
            Vec::new()
        };
        out.push(GoldenStep {
            page: page.clone(),
            action_space,
            history: history.clone(),
        });
        let adopted = Candidate::from(g.clone());
        let o = env.execute(task, i, &page, g, ExecutionMode::Actual)?;
        page = env.advance(task, i, &page, &adopted, &o)?.next_page;
        history.push(adopted);
    }
    Ok(out)
}

/// Outcome of a dataset action: real transitions on a graph, overlays
/// otherwise. Out-of-space actions leave the page as it was.
fn outcome(
    env: &Environment,
    task: &Task,
    step: usize,
    page: &Page,
    action: &Action,
) -> Result<ExecutionOutcome, EnvError> {
    let mode = if env.graph().is_some() {
        ExecutionMode::Actual
    } else {
        ExecutionMode::Simulated
    };
    match env.execute(task, step, page, action, mode) {
        Err(EnvError::InvalidAction { .. }) => Ok(ExecutionOutcome::unchanged(page, mode)),
        r => r,
    }
}

/// Page reference for an outcome: the page id, or for simulated outcomes
/// the annotated page `id#sim:<action>`.
pub fn outcome_ref(outcome: &ExecutionOutcome, action: &Action) -> String {
    match outcome.mode {
        ExecutionMode::Actual => outcome.next_page.page_id.clone(),
        ExecutionMode::Simulated => format!("{}#sim:{}", outcome.next_page.page_id, action.canonical()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentExample {
    pub task_id: String,
    pub step: usize,
    pub instruction: String,
    pub page: Page,
    pub action_space: Vec<Action>,
    pub history: Vec<Candidate>,
    pub candidate: Action,
    pub outcome: ExecutionOutcome,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionKind {
    /// Generated actions were judged ineffective; the target is the golden action.
    Correct,
    /// A judged-effective action is kept as it is.
    Preserve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionExample {
    pub task_id: String,
    pub step: usize,
    pub instruction: String,
    pub page: Page,
    pub action_space: Vec<Action>,
    pub history: Vec<Candidate>,
    pub attempts: Vec<Action>,
    pub target: Action,
    /// Outcome of the last listed attempt.
    pub outcome: ExecutionOutcome,
    pub kind: ReflectionKind,
}

/// One line of a judgment dataset file. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub role: String,
    pub instruction: String,
    pub page: String,
    pub action_space: Vec<String>,
    pub history: Vec<String>,
    pub attempts: Vec<String>,
    pub candidate: String,
    pub outcome: String,
    pub label: u8,
}

/// One line of a reflection dataset file. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub role: String,
    pub instruction: String,
    pub page: String,
    pub action_space: Vec<String>,
    pub history: Vec<String>,
    pub attempts: Vec<String>,
    pub target: String,
    pub outcome: String,
    pub label: ReflectionKind,
}

fn strings<'a, T: 'a>(items: impl IntoIterator<Item = &'a T>, f: impl Fn(&T) -> String) -> Vec<String> {
    items.into_iter().map(f).collect()
}

impl JudgmentExample {
    pub fn record(&self) -> JudgmentRecord {
        JudgmentRecord {
            role: "judger".into(),
            instruction: self.instruction.clone(),
            page: self.page.page_id.clone(),
            action_space: strings(&self.action_space, Action::canonical),
            history: strings(&self.history, Candidate::display_text),
            attempts: Vec::new(),
            candidate: self.candidate.canonical(),
            outcome: outcome_ref(&self.outcome, &self.candidate),
            label: u8::from(self.label),
        }
    }
}

impl ReflectionExample {
    pub fn record(&self) -> ReflectionRecord {
        let last = self.attempts.last().unwrap_or(&self.target);
        ReflectionRecord {
            role: "reflector".into(),
            instruction: self.instruction.clone(),
            page: self.page.page_id.clone(),
            action_space: strings(&self.action_space, Action::canonical),
            history: strings(&self.history, Candidate::display_text),
            attempts: strings(&self.attempts, Action::canonical),
            target: self.target.canonical(),
            outcome: outcome_ref(&self.outcome, last),
            label: self.kind,
        }
    }
}

/// Serialize records as JSON lines.
pub fn to_jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn per_task<T: Send>(tasks: &[Task], parallelism: usize, f: impl Fn(&Task) -> Vec<T> + Sync + Send) -> Vec<T> {
    let chunks: Vec<Vec<T>> = if parallelism <= 1 {
        tasks.iter().map(&f).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            Ok(pool) => pool.install(|| tasks.par_iter().map(&f).collect()),
            Err(_) => tasks.iter().map(&f).collect(),
        }
    };
    chunks.into_iter().flatten().collect()
}

fn sorted_tasks(tasks: &[Task]) -> Vec<Task> {
    let mut t = tasks.to_vec();
    t.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    t
}

fn walk_or_log(env: &Environment, task: &Task) -> Option<Vec<GoldenStep>> {
    match golden_walk(env, task) {
        Ok(w) => Some(w),
        Err(e) => {
            log::warn!("skipping task {}: golden path does not replay: {e}", task.task_id);
            None
        }
    }
}

fn context<'a>(task: &'a Task, s: &'a GoldenStep, outcome_page: Option<&'a Page>, seed: u64) -> PolicyContext<'a> {
    PolicyContext {
        task,
        page: &s.page,
        action_space: &s.action_space,
        history: &s.history,
        attempts: &[],
        outcome_page,
        seed,
    }
}

fn generate_or_log(generator: &dyn Generator, ctx: &PolicyContext<'_>) -> Option<Action> {
    match generator.generate(ctx) {
        Ok(a) => Some(a),
        Err(e) => {
            log::warn!("task {} step {}: generation skipped: {e}", ctx.task.task_id, ctx.step());
            None
        }
    }
}

/// One positive per golden step and one negative per generated action that
/// misses the golden action on either channel. Output is ordered by task id
/// and step.
pub fn build_judgment(
    tasks: &[Task],
    generator: &dyn Generator,
    env: &Environment,
    cfg: &DatasetConfig,
) -> Vec<JudgmentExample> {
    let tasks = sorted_tasks(tasks);
    per_task(&tasks, cfg.parallelism, |task| {
        let Some(walk) = walk_or_log(env, task) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let seed = derive_seed(cfg.seed, "regen", 0);
        for (i, s) in walk.iter().enumerate() {
            let golden = &task.golden_actions[i];
            let mut push = |candidate: &Action, label: bool| match outcome(env, task, i, &s.page, candidate) {
                Ok(o) => out.push(JudgmentExample {
                    task_id: task.task_id.clone(),
                    step: i,
                    instruction: task.instruction.clone(),
                    page: s.page.clone(),
                    action_space: s.action_space.clone(),
                    history: s.history.clone(),
                    candidate: candidate.clone(),
                    outcome: o,
                    label,
                }),
                Err(e) => log::warn!("task {} step {i}: cannot execute {candidate}: {e}", task.task_id),
            };
            push(golden, true);
            if let Some(generated) = generate_or_log(generator, &context(task, s, None, seed)) {
                if !step_matches(&generated, golden, &cfg.match_cfg).both() {
                    push(&generated, false);
                }
            }
        }
        out
    })
}

/// Regenerate and judge every golden step. Steps with ineffective
/// generations yield one correction example listing all of them; steps whose
/// first generation is effective yield a preserve example with probability
/// `preserve_rate`. Output is ordered by task id and step.
pub fn build_reflection(
    tasks: &[Task],
    generator: &dyn Generator,
    judger: &dyn Judger,
    env: &Environment,
    cfg: &DatasetConfig,
) -> Vec<ReflectionExample> {
    let tasks = sorted_tasks(tasks);
    per_task(&tasks, cfg.parallelism, |task| {
        let Some(walk) = walk_or_log(env, task) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (i, s) in walk.iter().enumerate() {
            let mut failed: Vec<(Action, ExecutionOutcome)> = Vec::new();
            let mut first_effective: Option<(Action, ExecutionOutcome)> = None;
            for r in 0..cfg.regenerations.max(1) {
                let seed = derive_seed(cfg.seed, "regen", r as u64);
                let Some(action) = generate_or_log(generator, &context(task, s, None, seed)) else {
                    continue;
                };
                let o = match outcome(env, task, i, &s.page, &action) {
                    Ok(o) => o,
                    Err(e) => {
                        log::warn!("task {} step {i}: cannot execute {action}: {e}", task.task_id);
                        continue;
                    }
                };
                let candidate = Candidate::from(action.clone());
                let valid = verify(&s.page, &o.next_page, &candidate, env.graph()).valid;
                let effective = valid
                    && match judger.judge(&context(task, s, Some(&o.next_page), seed), &action) {
                        Ok(v) => v.helpful,
                        Err(e) => {
                            log::warn!("task {} step {i}: judgment skipped: {e}", task.task_id);
                            continue;
                        }
                    };
                if effective {
                    if failed.is_empty() {
                        first_effective = Some((action, o));
                    }
                    break;
                }
                if !failed.iter().any(|(a, _)| *a == action) {
                    failed.push((action, o));
                }
            }
            let example = |attempts: Vec<Action>, target: Action, o: ExecutionOutcome, kind| ReflectionExample {
                task_id: task.task_id.clone(),
                step: i,
                instruction: task.instruction.clone(),
                page: s.page.clone(),
                action_space: s.action_space.clone(),
                history: s.history.clone(),
                attempts,
                target,
                outcome: o,
                kind,
            };
            if let Some((_, last_outcome)) = failed.last() {
                let golden = task.golden_actions[i].clone();
                let attempts: Vec<Action> = failed.iter().map(|(a, _)| a.clone()).collect();
                let kind = if attempts.contains(&golden) {
                    ReflectionKind::Preserve
                } else {
                    ReflectionKind::Correct
                };
                out.push(example(attempts, golden, last_outcome.clone(), kind));
            } else if let Some((action, o)) = first_effective {
                let mut rng = stream(cfg.seed, "preserve-sample", &task.task_id, i, 0);
                if rng.random::<f64>() < cfg.preserve_rate {
                    out.push(example(vec![action.clone()], action, o, ReflectionKind::Preserve));
                }
            }
        }
        out
    })
}
