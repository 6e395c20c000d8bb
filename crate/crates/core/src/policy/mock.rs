//! Deterministic stand-ins for the model-backed roles.
//!
//! The oracle mocks know the task's golden actions and inject controlled
//! noise; the scripted policy replays fixed per-step attempt lists. Both are
//! deterministic given `(seed, context)`.

use std::collections::{HashMap, HashSet};

use rand::Rng;

use super::{Generator, Judger, JudgerVerdict, PolicyContext, PolicyError, Reflector};
use crate::action::{parse_action, Action};
use crate::matching::{step_matches, MatchConfig};
use crate::rng::stream;

fn pick<'a>(rng: &mut impl Rng, pool: &[&'a Action]) -> &'a Action {
    pool[rng.random_range(0..pool.len())]
}

/// Emits the golden action with probability `1 - error_rate`, otherwise a
/// seeded choice among in-space actions that fail to match the golden one.
#[derive(Debug, Clone)]
pub struct OracleGenerator {
    pub error_rate: f64,
    pub match_cfg: MatchConfig,
}

impl OracleGenerator {
    pub fn new(error_rate: f64) -> Self {
        Self {
            error_rate,
            match_cfg: MatchConfig::default(),
        }
    }

    fn wrong_action(&self, ctx: &PolicyContext<'_>, rng: &mut impl Rng) -> Action {
        let golden = ctx.golden();
        let pool: Vec<&Action> = ctx
            .action_space
            .iter()
            .filter(|a| !step_matches(a, golden, &self.match_cfg).both())
            .collect();
        if !pool.is_empty() {
            return pick(rng, &pool).clone();
        }
        if golden.is_complete() {
            golden.clone()
        } else {
            Action::Complete
        }
    }
}

impl Generator for OracleGenerator {
    fn generate(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError> {
        let mut rng = stream(ctx.seed, "generator", &ctx.task.task_id, ctx.step(), 0);
        let err = rng.random::<f64>() < self.error_rate;
        if err {
            return Ok(self.wrong_action(ctx, &mut rng));
        }
        let golden = ctx.golden();
        let reachable = golden.is_complete() || ctx.action_space.is_empty() || ctx.action_space.contains(golden);
        if reachable {
            Ok(golden.clone())
        } else {
            // off the golden route: any in-space action
            let pool: Vec<&Action> = ctx.action_space.iter().collect();
            Ok(pick(&mut rng, &pool).clone())
        }
    }
}

/// Labels a candidate helpful iff it matches the golden step on both
/// channels, then flips the verdict with probability `flip_prob`.
#[derive(Debug, Clone)]
pub struct OracleJudger {
    pub flip_prob: f64,
    pub match_cfg: MatchConfig,
}

impl OracleJudger {
    pub fn new() -> Self {
        Self::noisy(0.0)
    }

    pub fn noisy(flip_prob: f64) -> Self {
        Self {
            flip_prob,
            match_cfg: MatchConfig::default(),
        }
    }
}

impl Default for OracleJudger {
    fn default() -> Self {
        Self::new()
    }
}

impl Judger for OracleJudger {
    fn judge(&self, ctx: &PolicyContext<'_>, candidate: &Action) -> Result<JudgerVerdict, PolicyError> {
        let truth = step_matches(candidate, ctx.golden(), &self.match_cfg).both();
        let flip = self.flip_prob > 0.0 && {
            let mut rng = stream(ctx.seed, "judger", &ctx.task.task_id, ctx.step(), ctx.attempts.len());
            rng.random::<f64>() < self.flip_prob
        };
        Ok(JudgerVerdict::hard(truth != flip))
    }
}

/// Returns the golden action if it has not been tried yet, otherwise a
/// seeded untried in-space action.
#[derive(Debug, Clone, Default)]
pub struct OracleReflector;

impl Reflector for OracleReflector {
    fn reflect(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError> {
        let golden = ctx.golden();
        let golden_ok = golden.is_complete() || ctx.action_space.is_empty() || ctx.action_space.contains(golden);
        if golden_ok && !ctx.was_attempted(golden) {
            return Ok(golden.clone());
        }
        let pool: Vec<&Action> = ctx.action_space.iter().filter(|a| !ctx.was_attempted(a)).collect();
        if pool.is_empty() {
            return Err(PolicyError::ExhaustedActionSpace);
        }
        let mut rng = stream(ctx.seed, "reflector", &ctx.task.task_id, ctx.step(), ctx.attempts.len());
        Ok(pick(&mut rng, &pool).clone())
    }
}

/// Approves every candidate. Used for replaying fixed trajectories.
#[derive(Debug, Clone, Default)]
pub struct AcceptAllJudger;

impl Judger for AcceptAllJudger {
    fn judge(&self, _ctx: &PolicyContext<'_>, _candidate: &Action) -> Result<JudgerVerdict, PolicyError> {
        Ok(JudgerVerdict::hard(true))
    }
}

/// Replays per-task, per-step verdict lists indexed by attempt. Missing
/// entries are judged helpful.
#[derive(Debug, Clone, Default)]
pub struct ScriptedJudger {
    verdicts: HashMap<String, Vec<Vec<bool>>>,
}

impl ScriptedJudger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_task(mut self, task_id: &str, steps: Vec<Vec<bool>>) -> Self {
        self.verdicts.insert(task_id.to_string(), steps);
        self
    }
}

impl Judger for ScriptedJudger {
    fn judge(&self, ctx: &PolicyContext<'_>, _candidate: &Action) -> Result<JudgerVerdict, PolicyError> {
        let helpful = self
            .verdicts
            .get(&ctx.task.task_id)
            .and_then(|steps| steps.get(ctx.step()))
            .and_then(|step| step.get(ctx.attempts.len()))
            .copied()
            .unwrap_or(true);
        Ok(JudgerVerdict::hard(helpful))
    }
}

/// Replays per-task, per-step attempt lists. The generator returns entry 0
/// of the current step, the reflector the entry after the attempts made so
/// far. Entries are raw strings so malformed outputs can be scripted; a
/// generator past the end of its script completes the task.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    scripts: HashMap<String, Vec<Vec<String>>>,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_task<S: Into<String>>(mut self, task_id: &str, steps: Vec<Vec<S>>) -> Self {
        let steps = steps
            .into_iter()
            .map(|s| s.into_iter().map(Into::into).collect())
            .collect();
        self.scripts.insert(task_id.to_string(), steps);
        self
    }

    /// One attempt per step, taken from a flat action list.
    pub fn from_actions(task_id: &str, actions: &[Action]) -> Self {
        Self::new().with_task(task_id, actions.iter().map(|a| vec![a.canonical()]).collect())
    }

    fn entry(&self, ctx: &PolicyContext<'_>, index: usize) -> Option<&str> {
        self.scripts
            .get(&ctx.task.task_id)?
            .get(ctx.step())?
            .get(index)
            .map(String::as_str)
    }

    fn parse(raw: &str) -> Result<Action, PolicyError> {
        parse_action(raw).map_err(|e| PolicyError::UnparseableResponse {
            raw: raw.to_string(),
            reason: e.reason,
        })
    }
}

impl Generator for ScriptedPolicy {
    fn generate(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError> {
        match self.entry(ctx, 0) {
            Some(raw) => Self::parse(raw),
            None => Ok(Action::Complete),
        }
    }
}

impl Reflector for ScriptedPolicy {
    fn reflect(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError> {
        match self.entry(ctx, ctx.attempts.len()) {
            Some(raw) => Self::parse(raw),
            None => Err(PolicyError::ExhaustedActionSpace),
        }
    }
}

/// Wraps a generator and reports the backend as unavailable for chosen tasks.
pub struct FailingGenerator<G> {
    pub inner: G,
    pub failing_tasks: HashSet<String>,
}

impl<G: Generator> Generator for FailingGenerator<G> {
    fn generate(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError> {
        if self.failing_tasks.contains(&ctx.task.task_id) {
            return Err(PolicyError::BackendUnavailable(format!(
                "scripted outage for task {}",
                ctx.task.task_id
            )));
        }
        self.inner.generate(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{BoundingBox, Candidate};
    use crate::page::{Page, Task};

    fn click(name: &str, i: u32) -> Action {
        Action::click(name, BoundingBox::new(0, i * 100, 50, i * 100 + 50).unwrap()).unwrap()
    }

    fn fixture(n_actions: u32) -> (Task, Page) {
        let space: Vec<Action> = (0..n_actions).map(|i| click(&format!("e{i}"), i)).collect();
        let task = Task {
            task_id: "t".into(),
            instruction: "tap e1".into(),
            start_page: "p".into(),
            golden_actions: vec![space[1].clone()],
            golden_final_class: None,
        };
        (task, Page::from_actions("p", "p", space))
    }

    fn ctx<'a>(task: &'a Task, page: &'a Page, attempts: &'a [Candidate], seed: u64) -> PolicyContext<'a> {
        PolicyContext {
            task,
            page,
            action_space: &page.action_space,
            history: &[],
            attempts,
            outcome_page: Some(page),
            seed,
        }
    }

    #[test]
    fn generator_error_rate_extremes() {
        let (task, page) = fixture(5);
        for seed in 0..20 {
            let c = ctx(&task, &page, &[], seed);
            assert_eq!(OracleGenerator::new(0.0).generate(&c).unwrap(), task.golden_actions[0]);
            let wrong = OracleGenerator::new(1.0).generate(&c).unwrap();
            assert_ne!(wrong, task.golden_actions[0]);
            assert!(page.action_space.contains(&wrong));
            assert_eq!(OracleGenerator::new(1.0).generate(&c).unwrap(), wrong);
        }
    }

    #[test]
    fn generator_with_no_alternatives_completes() {
        let (task, _) = fixture(5);
        let page = Page::from_actions("p", "p", vec![task.golden_actions[0].clone()]);
        let c = ctx(&task, &page, &[], 3);
        assert_eq!(OracleGenerator::new(1.0).generate(&c).unwrap(), Action::Complete);
    }

    #[test]
    fn oracle_judger_verdicts() {
        let (task, page) = fixture(5);
        let c = ctx(&task, &page, &[], 0);
        let v = OracleJudger::new().judge(&c, &task.golden_actions[0]).unwrap();
        assert!(v.helpful);
        assert_eq!(v.confidence, 1.0);
        let v = OracleJudger::new().judge(&c, &page.action_space[0]).unwrap();
        assert!(!v.helpful);
        assert_eq!(v.confidence, 0.0);
    }

    #[test]
    fn noisy_judger_flip_rate() {
        // 10,000 independent keyed draws; binomial sd is 0.004
        let (mut task, page) = fixture(5);
        let judger = OracleJudger::noisy(0.2);
        let mut flips = 0;
        for i in 0..10_000 {
            task.task_id = format!("t{i}");
            let c = ctx(&task, &page, &[], 7);
            if !judger.judge(&c, &task.golden_actions[0]).unwrap().helpful {
                flips += 1;
            }
        }
        let rate = flips as f64 / 10_000.0;
        assert!((rate - 0.2).abs() <= 0.02, "flip rate {rate}");
    }

    #[test]
    fn reflector_prefers_untried_golden_then_untried_others() {
        let (task, page) = fixture(4);
        let c = ctx(&task, &page, &[], 0);
        assert_eq!(OracleReflector.reflect(&c).unwrap(), task.golden_actions[0]);

        let tried: Vec<Candidate> = vec![page.action_space[1].clone().into(), page.action_space[0].clone().into()];
        let c = ctx(&task, &page, &tried, 0);
        let r = OracleReflector.reflect(&c).unwrap();
        assert!(r == page.action_space[2] || r == page.action_space[3]);
    }

    #[test]
    fn reflector_exhausts() {
        let (task, page) = fixture(3);
        let tried: Vec<Candidate> = page.action_space.iter().cloned().map(Candidate::from).collect();
        let c = ctx(&task, &page, &tried, 0);
        assert_eq!(OracleReflector.reflect(&c), Err(PolicyError::ExhaustedActionSpace));
    }

    #[test]
    fn scripted_policy_replays_and_surfaces_parse_errors() {
        let (task, page) = fixture(3);
        let p = ScriptedPolicy::new().with_task("t", vec![vec!["click(\"e0\",[0,0][50,50])", "oops"]]);
        let c = ctx(&task, &page, &[], 0);
        assert_eq!(p.generate(&c).unwrap(), page.action_space[0]);
        let tried = vec![Candidate::from(page.action_space[0].clone())];
        let c = ctx(&task, &page, &tried, 0);
        assert!(matches!(p.reflect(&c), Err(PolicyError::UnparseableResponse { .. })));
        let tried = vec![tried[0].clone(), tried[0].clone()];
        let c = ctx(&task, &page, &tried, 0);
        assert_eq!(p.reflect(&c), Err(PolicyError::ExhaustedActionSpace));
    }

    #[test]
    fn mocks_are_deterministic() {
        let (task, page) = fixture(6);
        let g = OracleGenerator::new(0.5);
        let j = OracleJudger::noisy(0.5);
        for seed in 0..50 {
            let c = ctx(&task, &page, &[], seed);
            assert_eq!(g.generate(&c).unwrap(), g.generate(&c).unwrap());
            assert_eq!(
                j.judge(&c, &page.action_space[2]).unwrap(),
                j.judge(&c, &page.action_space[2]).unwrap()
            );
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reflect_never_repeats_an_attempt(
                n in 1u32..12,
                tried_mask in prop::collection::vec(any::<bool>(), 12),
                golden_idx in 0u32..12,
                seed in any::<u64>(),
            ) {
                let space: Vec<Action> = (0..n).map(|i| click(&format!("e{i}"), i)).collect();
                let task = Task {
                    task_id: "t".into(),
                    instruction: "x".into(),
                    start_page: "p".into(),
                    golden_actions: vec![click(&format!("e{golden_idx}"), golden_idx)],
                    golden_final_class: None,
                };
                let page = Page::from_actions("p", "p", space.clone());
                let tried: Vec<Candidate> = space
                    .iter()
                    .zip(&tried_mask)
                    .filter(|(_, t)| **t)
                    .map(|(a, _)| a.clone().into())
                    .collect();
                let c = ctx(&task, &page, &tried, seed);
                match OracleReflector.reflect(&c) {
                    Ok(a) => prop_assert!(!c.was_attempted(&a)),
                    Err(e) => {
                        prop_assert_eq!(e, PolicyError::ExhaustedActionSpace);
                        prop_assert_eq!(tried.len(), space.len());
                    }
                }
            }
        }
    }
}
