//! GUI environments: graph-structured datasets where every (page, action)
//! transition was recorded, and chain-structured datasets that only hold the
//! golden page sequence of each task.
//!
//! Executing an action either follows a recorded transition (actual
//! execution) or annotates the current page with overlay markers showing
//! what the action would do (simulated execution).

mod store;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, Candidate};
use crate::page::{MarkerKind, Overlay, Page, Task};

pub use store::{load_chain, load_graph, load_tasks, save_chain, save_graph, save_tasks, GraphDataset, GraphMeta};

pub const HIGHLIGHT_COLOR: &str = "red";

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown page {0:?}")]
    UnknownPage(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("action {action} is not in the action space of page {page:?}")]
    InvalidAction { page: String, action: String },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    #[default]
    Actual,
    Simulated,
}

impl std::str::FromStr for ExecutionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "actual" => Ok(ExecutionMode::Actual),
            "simulated" => Ok(ExecutionMode::Simulated),
            other => Err(format!("unknown execution mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub next_page: Page,
    pub mode: ExecutionMode,
    pub changed: bool,
}

impl ExecutionOutcome {
    /// Nothing happened: the page is returned as-is.
    pub fn unchanged(page: &Page, mode: ExecutionMode) -> Self {
        Self {
            next_page: page.clone(),
            mode,
            changed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub action: Action,
    pub target: String,
}

/// Pages plus recorded transitions. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct EnvironmentGraph {
    pages: BTreeMap<String, Page>,
    edges: BTreeMap<(String, String), String>,
}

impl EnvironmentGraph {
    /// Validates the graph: unique page ids, every edge endpoint present,
    /// every edge action drawn from its source page's action space. Pages
    /// without an equivalence class get their structural hash.
    pub fn new(pages: Vec<Page>, edges: Vec<Edge>) -> Result<Self, EnvError> {
        let mut map = BTreeMap::new();
        for mut p in pages {
            for a in &p.action_space {
                if a.is_complete() {
                    return Err(EnvError::Integrity(format!(
                        "page {:?} lists the completion token in its action space",
                        p.page_id
                    )));
                }
            }
            if p.equivalence_class.is_empty() {
                p.equivalence_class = p.structural_hash();
            }
            let id = p.page_id.clone();
            if map.insert(id.clone(), p).is_some() {
                return Err(EnvError::Integrity(format!("duplicate page id {id:?}")));
            }
        }
        let mut edge_map = BTreeMap::new();
        for e in edges {
            let Some(src) = map.get(&e.source) else {
                return Err(EnvError::Integrity(format!(
                    "edge {} --{}--> {}: source page missing",
                    e.source, e.action, e.target
                )));
            };
            if !map.contains_key(&e.target) {
                return Err(EnvError::Integrity(format!(
                    "edge {} --{}--> {}: target page missing",
                    e.source, e.action, e.target
                )));
            }
            if !src.contains_action(&e.action) {
                return Err(EnvError::Integrity(format!(
                    "edge {} --{}--> {}: action not in source action space",
                    e.source, e.action, e.target
                )));
            }
            let key = (e.source.clone(), e.action.canonical());
            if let Some(prev) = edge_map.insert(key, e.target.clone()) {
                if prev != e.target {
                    return Err(EnvError::Integrity(format!(
                        "edge {} --{}--> conflicting targets {prev} and {}",
                        e.source, e.action, e.target
                    )));
                }
            }
        }
        Ok(Self {
            pages: map,
            edges: edge_map,
        })
    }

    pub fn page(&self, id: &str) -> Result<&Page, EnvError> {
        self.pages.get(id).ok_or_else(|| EnvError::UnknownPage(id.to_string()))
    }

    pub fn pages(&self) -> impl Iterator<Item = &Page> {
        self.pages.values()
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().map(|((src, act), dst)| Edge {
            source: src.clone(),
            action: act.parse().expect("edge keys are canonical actions"),
            target: dst.clone(),
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn target(&self, page_id: &str, action: &Action) -> Option<&str> {
        self.edges
            .get(&(page_id.to_string(), action.canonical()))
            .map(String::as_str)
    }

    pub fn equivalence_class(&self, id: &str) -> Result<&str, EnvError> {
        Ok(self.page(id)?.equivalence_class.as_str())
    }

    pub fn page_equal(&self, p: &str, q: &str) -> Result<bool, EnvError> {
        Ok(self.equivalence_class(p)? == self.equivalence_class(q)?)
    }

    pub fn action_space_of(&self, id: &str) -> Result<&[Action], EnvError> {
        Ok(&self.page(id)?.action_space)
    }

    /// Follow the recorded transition for `action`. An in-space action with no
    /// recorded transition leaves the page as it is.
    pub fn step_actual(&self, page_id: &str, action: &Action) -> Result<ExecutionOutcome, EnvError> {
        let page = self.page(page_id)?;
        if action.is_complete() {
            return Ok(ExecutionOutcome::unchanged(page, ExecutionMode::Actual));
        }
        if !page.contains_action(action) {
            return Err(EnvError::InvalidAction {
                page: page_id.to_string(),
                action: action.canonical(),
            });
        }
        let next = match self.target(page_id, action) {
            Some(t) => self.page(t)?,
            None => page,
        };
        Ok(ExecutionOutcome {
            changed: !self.page_equal(page_id, &next.page_id)?,
            next_page: next.clone(),
            mode: ExecutionMode::Actual,
        })
    }

    /// Ids of pages reachable from `start` (including `start`).
    pub fn reachable_from(&self, start: &str) -> Result<HashSet<String>, EnvError> {
        self.page(start)?;
        let mut seen = HashSet::from([start.to_string()]);
        let mut stack = vec![start.to_string()];
        while let Some(p) = stack.pop() {
            for ((src, _), dst) in self.edges.range((p.clone(), String::new())..) {
                if *src != p {
                    break;
                }
                if seen.insert(dst.clone()) {
                    stack.push(dst.clone());
                }
            }
        }
        Ok(seen)
    }
}

/// Annotate `page` with markers showing the effect of `action`.
pub fn step_simulated(page: &Page, action: &Action) -> ExecutionOutcome {
    let mut next = page.clone();
    let marker = |marker, bbox, payload: Option<&str>| Overlay {
        marker,
        bbox,
        color: HIGHLIGHT_COLOR.to_string(),
        payload: payload.map(String::from),
    };
    match action {
        Action::Complete => {}
        Action::Click { bbox, .. } => {
            next.overlays.push(marker(MarkerKind::BoxHighlight, *bbox, None));
        }
        Action::Scroll { bbox, direction, .. } => {
            next.overlays
                .push(marker(MarkerKind::Arrow, *bbox, Some(direction.as_str())));
        }
        Action::Input { bbox, text, .. } => {
            next.overlays.push(marker(MarkerKind::BoxHighlight, *bbox, None));
            next.overlays
                .push(marker(MarkerKind::TextBadge, *bbox, Some(text.as_str())));
        }
    }
    let changed = next.overlays.len() != page.overlays.len();
    ExecutionOutcome {
        next_page: next,
        mode: ExecutionMode::Simulated,
        changed,
    }
}

/// One task of a chain dataset with its golden page sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTask {
    #[serde(flatten)]
    pub task: Task,
    pub pages: Vec<Page>,
}

impl ChainTask {
    pub fn new(task: Task, mut pages: Vec<Page>) -> Result<Self, EnvError> {
        if pages.len() != task.golden_actions.len() + 1 {
            return Err(EnvError::Integrity(format!(
                "chain task {:?}: {} pages for {} golden actions",
                task.task_id,
                pages.len(),
                task.golden_actions.len()
            )));
        }
        if pages[0].page_id != task.start_page {
            return Err(EnvError::Integrity(format!(
                "chain task {:?}: start page {:?} is not the first page",
                task.task_id, task.start_page
            )));
        }
        for p in &mut pages {
            if p.equivalence_class.is_empty() {
                p.equivalence_class = p.structural_hash();
            }
        }
        Ok(Self { task, pages })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChainDataset {
    tasks: BTreeMap<String, ChainTask>,
}

impl ChainDataset {
    pub fn new(tasks: Vec<ChainTask>) -> Result<Self, EnvError> {
        let mut map = BTreeMap::new();
        for t in tasks {
            let id = t.task.task_id.clone();
            if map.insert(id.clone(), t).is_some() {
                return Err(EnvError::Integrity(format!("duplicate task id {id:?}")));
            }
        }
        Ok(Self { tasks: map })
    }

    pub fn get(&self, task_id: &str) -> Result<&ChainTask, EnvError> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| EnvError::UnknownTask(task_id.to_string()))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &ChainTask> {
        self.tasks.values()
    }
}

/// The environment an agent runs against.
#[derive(Debug, Clone)]
pub enum Environment {
    Graph(EnvironmentGraph),
    Chain(ChainDataset),
}

impl Environment {
    pub fn graph(&self) -> Option<&EnvironmentGraph> {
        match self {
            Environment::Graph(g) => Some(g),
            Environment::Chain(_) => None,
        }
    }

    /// Chain datasets carry no complete action spaces.
    pub fn has_action_spaces(&self) -> bool {
        matches!(self, Environment::Graph(_))
    }

    pub fn start_page(&self, task: &Task) -> Result<Page, EnvError> {
        match self {
            Environment::Graph(g) => g.page(&task.start_page).cloned(),
            Environment::Chain(c) => Ok(c.get(&task.task_id)?.pages[0].clone()),
        }
    }

    /// Execute a candidate attempted at `step` of `task` on `page`.
    ///
    /// Graph environments in actual mode follow transitions and report
    /// out-of-space actions as `InvalidAction`. Chain environments can only
    /// actually execute the golden action; everything else is simulated.
    pub fn execute(
        &self,
        task: &Task,
        step: usize,
        page: &Page,
        action: &Action,
        mode: ExecutionMode,
    ) -> Result<ExecutionOutcome, EnvError> {
        match (self, mode) {
            (_, ExecutionMode::Simulated) => Ok(step_simulated(page, action)),
            (Environment::Graph(g), ExecutionMode::Actual) => g.step_actual(&page.page_id, action),
            (Environment::Chain(c), ExecutionMode::Actual) => {
                let chain = c.get(&task.task_id)?;
                if action.is_complete() {
                    return Ok(ExecutionOutcome::unchanged(page, ExecutionMode::Actual));
                }
                match task.golden_actions.get(step) {
                    Some(g) if g == action && step + 1 < chain.pages.len() => {
                        let next = &chain.pages[step + 1];
                        Ok(ExecutionOutcome {
                            changed: !page.same_state(next),
                            next_page: next.clone(),
                            mode: ExecutionMode::Actual,
                        })
                    }
                    _ => Ok(step_simulated(page, action)),
                }
            }
        }
    }

    /// Move the episode forward after `adopted` was committed at `step`.
    ///
    /// `last` is the outcome of executing the adopted candidate; in actual
    /// mode on a graph it already is the next state. Chain environments
    /// replay the recorded page sequence regardless of the adopted action.
    pub fn advance(
        &self,
        task: &Task,
        step: usize,
        page: &Page,
        adopted: &Candidate,
        last: &ExecutionOutcome,
    ) -> Result<ExecutionOutcome, EnvError> {
        if adopted.is_complete() {
            return Ok(ExecutionOutcome::unchanged(page, ExecutionMode::Actual));
        }
        match self {
            Environment::Graph(g) => {
                if last.mode == ExecutionMode::Actual {
                    return Ok(last.clone());
                }
                match adopted.action() {
                    Some(a) => match g.step_actual(&page.page_id, a) {
                        Ok(o) => Ok(o),
                        Err(EnvError::InvalidAction { .. }) => {
                            Ok(ExecutionOutcome::unchanged(page, ExecutionMode::Actual))
                        }
                        Err(e) => Err(e),
                    },
                    None => Ok(ExecutionOutcome::unchanged(page, ExecutionMode::Actual)),
                }
            }
            Environment::Chain(c) => {
                let chain = c.get(&task.task_id)?;
                let next = &chain.pages[(step + 1).min(chain.pages.len() - 1)];
                Ok(ExecutionOutcome {
                    changed: !page.same_state(next),
                    next_page: next.clone(),
                    mode: ExecutionMode::Actual,
                })
            }
        }
    }
}
