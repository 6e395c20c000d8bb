//! Evaluation of episodes against golden trajectories.
//!
//! Adopted actions are aligned with golden actions by position. Step-level
//! accuracy divides by the number of golden steps: extra generated steps are
//! ignored and missing ones count as misses. Undefined quantities (empty
//! denominators) are `None` rather than zero.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionKind, Candidate};
use crate::agent::{Episode, StepTimings};
use crate::environment::{EnvironmentGraph, ExecutionMode};
use crate::matching::{candidate_matches, MatchConfig, StepMatch};
use crate::page::Task;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("episode for task {0} has no golden trajectory")]
    UnknownTask(String),
    #[error("task success needs a graph environment and actual execution")]
    ModeUnsupported,
    #[error("task {0} has no golden final page class")]
    MissingFinalClass(String),
    #[error("page {0} is not in the environment graph")]
    UnknownPage(String),
}

/// An episode together with the task it was run on.
#[derive(Debug, Clone, Copy)]
pub struct Scored<'a> {
    pub episode: &'a Episode,
    pub task: &'a Task,
}

/// Pair every episode with its task by id.
pub fn pair<'a>(episodes: &'a [Episode], tasks: &'a [Task]) -> Result<Vec<Scored<'a>>, MetricsError> {
    let by_id: HashMap<&str, &Task> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    episodes
        .iter()
        .map(|e| {
            by_id
                .get(e.task_id.as_str())
                .map(|t| Scored { episode: e, task: t })
                .ok_or_else(|| MetricsError::UnknownTask(e.task_id.clone()))
        })
        .collect()
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn positional(s: &Scored<'_>, cfg: &MatchConfig) -> Vec<StepMatch> {
    let generated: Vec<&Candidate> = s.episode.adopted_actions().collect();
    s.task
        .golden_actions
        .iter()
        .enumerate()
        .map(|(i, g)| {
            generated
                .get(i)
                .map_or(StepMatch::NONE, |c| candidate_matches(c, g, cfg))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAccuracy {
    pub iou: Option<f64>,
    pub text: Option<f64>,
}

pub fn step_level_accuracy(scored: &[Scored<'_>], cfg: &MatchConfig) -> StepAccuracy {
    let (mut iou, mut text, mut total) = (0, 0, 0);
    for s in scored {
        for m in positional(s, cfg) {
            iou += usize::from(m.iou);
            text += usize::from(m.text);
            total += 1;
        }
    }
    StepAccuracy {
        iou: ratio(iou, total),
        text: ratio(text, total),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub both: Option<f64>,
    pub iou: Option<f64>,
    pub text: Option<f64>,
}

pub fn task_level_accuracy(scored: &[Scored<'_>], cfg: &MatchConfig) -> TaskAccuracy {
    let (mut both, mut iou, mut text) = (0, 0, 0);
    for s in scored {
        if s.episode.steps.len() != s.task.golden_actions.len() {
            continue;
        }
        let m = positional(s, cfg);
        both += usize::from(m.iter().all(StepMatch::both));
        iou += usize::from(m.iter().all(|m| m.iou));
        text += usize::from(m.iter().all(|m| m.text));
    }
    let n = scored.len();
    TaskAccuracy {
        both: ratio(both, n),
        iou: ratio(iou, n),
        text: ratio(text, n),
    }
}

/// Whether the episode ever stood on a page of the task's golden final
/// class. Continuing after reaching it still counts.
pub fn task_success(episode: &Episode, task: &Task, graph: Option<&EnvironmentGraph>) -> Result<bool, MetricsError> {
    let graph = graph.ok_or(MetricsError::ModeUnsupported)?;
    if episode.execution_mode != ExecutionMode::Actual {
        return Err(MetricsError::ModeUnsupported);
    }
    let key = task
        .golden_final_class
        .as_deref()
        .ok_or_else(|| MetricsError::MissingFinalClass(task.task_id.clone()))?;
    let visited = episode
        .trajectory
        .visited_pages()
        .chain(std::iter::once(episode.trajectory.final_page.as_str()));
    for id in visited {
        let class = graph
            .equivalence_class(id)
            .map_err(|_| MetricsError::UnknownPage(id.to_string()))?;
        if class == key {
            return Ok(true);
        }
    }
    Ok(false)
}

pub fn task_success_rate(scored: &[Scored<'_>], graph: Option<&EnvironmentGraph>) -> Result<Option<f64>, MetricsError> {
    let mut hits = 0;
    for s in scored {
        hits += usize::from(task_success(s.episode, s.task, graph)?);
    }
    Ok(ratio(hits, scored.len()))
}

/// Joint counts of a binary prediction against the truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }
}

/// Cells of a 2×2 table as fractions of its total. Rows are the prediction
/// (or outcome), columns whether the first attempt was actually wrong.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table2x2 {
    pub row1_error: f64,
    pub row1_correct: f64,
    pub row2_error: f64,
    pub row2_correct: f64,
    pub total: usize,
}

impl Table2x2 {
    fn from_counts(c: [usize; 4]) -> Option<Self> {
        let total: usize = c.iter().sum();
        let f = |x: usize| x as f64 / total as f64;
        (total > 0).then(|| Self {
            row1_error: f(c[0]),
            row1_correct: f(c[1]),
            row2_error: f(c[2]),
            row2_correct: f(c[3]),
            total,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub confusion: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Rows: judged as error, judged as correct.
    pub distribution: Option<Table2x2>,
}

fn first_attempt_wrong(s: &Scored<'_>, step: usize, cfg: &MatchConfig) -> bool {
    let first = &s.episode.steps[step].first_attempt().candidate;
    !candidate_matches(first, s.task.golden_at(step), cfg).both()
}

/// Detection quality over first attempts: a detection fires when the loop
/// did not adopt the first attempt as accepted, and a first attempt is
/// actually wrong when it misses the golden step on either channel.
pub fn detection_scores(scored: &[Scored<'_>], cfg: &MatchConfig) -> DetectionScores {
    let mut c = Confusion::default();
    for s in scored {
        for (i, rec) in s.episode.steps.iter().enumerate() {
            c.add(rec.detection_fired, first_attempt_wrong(s, i, cfg));
        }
    }
    DetectionScores {
        confusion: c,
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        distribution: Table2x2::from_counts([c.tp, c.fp, c.fn_, c.tn]),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryCounts {
    pub error_recovered: usize,
    pub error_unrecovered: usize,
    pub correct_kept: usize,
    pub correct_corrupted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScores {
    pub counts: RecoveryCounts,
    /// Rows: final action correct, final action wrong. `None` when no
    /// detection fired.
    pub distribution: Option<Table2x2>,
    /// Share of actually-wrong detected steps whose adopted action is right.
    pub error_recovery_rate: Option<f64>,
    /// Share of actually-right detected steps whose adopted action is still right.
    pub correct_preservation_rate: Option<f64>,
}

pub fn recovery_scores(scored: &[Scored<'_>], cfg: &MatchConfig) -> RecoveryScores {
    let mut c = RecoveryCounts::default();
    for s in scored {
        for (i, rec) in s.episode.steps.iter().enumerate() {
            if !rec.detection_fired {
                continue;
            }
            let wrong = first_attempt_wrong(s, i, cfg);
            let fixed = candidate_matches(&rec.adopted, s.task.golden_at(i), cfg).both();
            match (wrong, fixed) {
                (true, true) => c.error_recovered += 1,
                (true, false) => c.error_unrecovered += 1,
                (false, true) => c.correct_kept += 1,
                (false, false) => c.correct_corrupted += 1,
            }
        }
    }
    RecoveryScores {
        counts: c,
        distribution: Table2x2::from_counts([
            c.error_recovered,
            c.correct_kept,
            c.error_unrecovered,
            c.correct_corrupted,
        ]),
        error_recovery_rate: ratio(c.error_recovered, c.error_recovered + c.error_unrecovered),
        correct_preservation_rate: ratio(c.correct_kept, c.correct_kept + c.correct_corrupted),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub count: usize,
    pub iou_acc: Option<f64>,
    pub text_acc: Option<f64>,
    /// Click, scroll and input shares are taken over non-complete golden
    /// steps; the complete share over all golden steps.
    pub share: Option<f64>,
}

pub fn action_type_breakdown(scored: &[Scored<'_>], cfg: &MatchConfig) -> BTreeMap<ActionKind, KindStats> {
    let mut counts: BTreeMap<ActionKind, (usize, usize, usize)> = BTreeMap::new();
    for s in scored {
        for (g, m) in s.task.golden_actions.iter().zip(positional(s, cfg)) {
            let e = counts.entry(g.kind()).or_default();
            e.0 += 1;
            e.1 += usize::from(m.iou);
            e.2 += usize::from(m.text);
        }
    }
    let total: usize = counts.values().map(|c| c.0).sum();
    let complete = counts.get(&ActionKind::Complete).map_or(0, |c| c.0);
    [
        ActionKind::Click,
        ActionKind::Scroll,
        ActionKind::Input,
        ActionKind::Complete,
    ]
    .into_iter()
    .map(|kind| {
        let (n, iou, text) = counts.get(&kind).copied().unwrap_or_default();
        let den = if kind == ActionKind::Complete {
            total
        } else {
            total - complete
        };
        let stats = KindStats {
            count: n,
            iou_acc: ratio(iou, n),
            text_acc: ratio(text, n),
            share: ratio(n, den),
        };
        (kind, stats)
    })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub steps: usize,
    pub mean: StepTimings,
    /// Mean model time per step: generator + verifier + judger + reflector.
    pub full_step_mean: f64,
    /// Generator mean over full-step mean.
    pub speed_ratio: Option<f64>,
}

pub fn timing_report(timings: &[StepTimings]) -> Option<TimingReport> {
    if timings.is_empty() {
        return None;
    }
    let n = timings.len() as f64;
    let mut sum = StepTimings::default();
    for t in timings {
        sum.generator += t.generator;
        sum.verifier += t.verifier;
        sum.judger += t.judger;
        sum.reflector += t.reflector;
        sum.execution += t.execution;
    }
    let mean = StepTimings {
        generator: sum.generator / n,
        verifier: sum.verifier / n,
        judger: sum.judger / n,
        reflector: sum.reflector / n,
        execution: sum.execution / n,
    };
    let full = mean.generator + mean.verifier + mean.judger + mean.reflector;
    Some(TimingReport {
        steps: timings.len(),
        mean,
        full_step_mean: full,
        speed_ratio: (full > 0.0).then(|| mean.generator / full),
    })
}

/// Keep a seeded random `fraction` of the items, in their original order.
pub fn sample_subset<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Vec<T> {
    let keep = ((items.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "sample", 0));
    idx.shuffle(&mut rng);
    let mut chosen = idx[..keep].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| items[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub episodes: usize,
    /// `None` when the run has no graph environment or used simulated
    /// execution.
    pub task_success_rate: Option<f64>,
    pub task_accuracy: TaskAccuracy,
    pub step_accuracy: StepAccuracy,
    pub detection: DetectionScores,
    pub recovery: RecoveryScores,
    pub per_action_type: BTreeMap<ActionKind, KindStats>,
    pub timing: Option<TimingReport>,
}

pub fn evaluate(
    scored: &[Scored<'_>],
    graph: Option<&EnvironmentGraph>,
    cfg: &MatchConfig,
) -> Result<SuiteReport, MetricsError> {
    let task_success_rate = match task_success_rate(scored, graph) {
        Ok(r) => r,
        Err(MetricsError::ModeUnsupported) => None,
        Err(e) => return Err(e),
    };
    let timings: Vec<StepTimings> = scored.iter().flat_map(|s| s.episode.timings()).collect();
    Ok(SuiteReport {
        episodes: scored.len(),
        task_success_rate,
        task_accuracy: task_level_accuracy(scored, cfg),
        step_accuracy: step_level_accuracy(scored, cfg),
        detection: detection_scores(scored, cfg),
        recovery: recovery_scores(scored, cfg),
        per_action_type: action_type_breakdown(scored, cfg),
        timing: timing_report(&timings),
    })
}

fn pct(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "n/a".to_string(),
    }
}

fn table(out: &mut String, t: Option<&Table2x2>, rows: [&str; 2]) {
    let cell = |f: fn(&Table2x2) -> f64| pct(t.map(f));
    let _ = writeln!(out, "  {:<18}{:>16}{:>18}", "", "actually error", "actually correct");
    let _ = writeln!(
        out,
        "  {:<18}{:>16}{:>18}",
        rows[0],
        cell(|t| t.row1_error),
        cell(|t| t.row1_correct)
    );
    let _ = writeln!(
        out,
        "  {:<18}{:>16}{:>18}",
        rows[1],
        cell(|t| t.row2_error),
        cell(|t| t.row2_correct)
    );
}

impl SuiteReport {
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "episodes: {}", self.episodes);
        let _ = writeln!(o, "task success rate: {}", pct(self.task_success_rate));
        let ta = &self.task_accuracy;
        let _ = writeln!(
            o,
            "task accuracy: both {}  iou {}  text {}",
            pct(ta.both),
            pct(ta.iou),
            pct(ta.text)
        );
        let sa = &self.step_accuracy;
        let _ = writeln!(o, "step accuracy: iou {}  text {}", pct(sa.iou), pct(sa.text));
        let d = &self.detection;
        let _ = writeln!(
            o,
            "\nerror detection: precision {}  recall {}  f1 {}",
            pct(d.precision),
            pct(d.recall),
            pct(d.f1)
        );
        table(&mut o, d.distribution.as_ref(), ["judged error", "judged correct"]);
        let r = &self.recovery;
        let _ = writeln!(
            o,
            "\nrecovery of judged-as-error steps: errors fixed {}  correct kept {}",
            pct(r.error_recovery_rate),
            pct(r.correct_preservation_rate)
        );
        table(&mut o, r.distribution.as_ref(), ["final correct", "final wrong"]);
        let _ = writeln!(
            o,
            "\n  {:<10}{:>8}{:>10}{:>10}{:>10}",
            "action", "count", "share", "iou", "text"
        );
        for (kind, s) in &self.per_action_type {
            let _ = writeln!(
                o,
                "  {:<10}{:>8}{:>10}{:>10}{:>10}",
                kind.as_str(),
                s.count,
                pct(s.share),
                pct(s.iou_acc),
                pct(s.text_acc)
            );
        }
        match &self.timing {
            Some(t) => {
                let m = &t.mean;
                let _ = writeln!(
                    o,
                    "\nmean seconds per step: generator {:.6}  verifier {:.6}  judger {:.6}  reflector {:.6}  execution {:.6}",
                    m.generator, m.verifier, m.judger, m.reflector, m.execution
                );
                let _ = writeln!(o, "speed ratio (generator / full step): {}", pct(t.speed_ratio));
            }
            None => {
                let _ = writeln!(o, "\ntiming: n/a");
            }
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(generator: f64, judger: f64, reflector: f64) -> StepTimings {
        StepTimings {
            generator,
            judger,
            reflector,
            ..Default::default()
        }
    }

    #[test]
    fn timing_ratios() {
        assert_eq!(timing_report(&[t(1.0, 0.0, 0.0)]).unwrap().speed_ratio, Some(1.0));
        assert_eq!(timing_report(&[t(1.0, 0.8, 0.2)]).unwrap().speed_ratio, Some(0.5));
        assert!(timing_report(&[]).is_none());
    }

    #[test]
    fn confusion_scores() {
        let c = Confusion {
            tp: 4,
            fp: 2,
            fn_: 3,
            tn: 11,
        };
        assert_eq!(c.precision(), Some(4.0 / 6.0));
        assert_eq!(c.recall(), Some(4.0 / 7.0));
        let empty = Confusion::default();
        assert_eq!(empty.precision(), None);
        assert_eq!(empty.f1(), None);
    }

    #[test]
    fn subset_is_seeded_and_ordered() {
        let items: Vec<u32> = (0..100).collect();
        let a = sample_subset(&items, 0.8, 5);
        assert_eq!(a.len(), 80);
        assert_eq!(a, sample_subset(&items, 0.8, 5));
        assert_ne!(a, sample_subset(&items, 0.8, 6));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(sample_subset(&items, 0.0, 5).is_empty());
    }
}
