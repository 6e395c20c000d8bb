//! GUI pages, tasks and trajectories.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::{Action, BoundingBox, Candidate};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub name: String,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Element>,
}

impl Element {
    pub fn leaf(name: impl Into<String>, bbox: BoundingBox) -> Self {
        Self {
            name: name.into(),
            bbox,
            children: Vec::new(),
        }
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a Element>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarkerKind {
    BoxHighlight,
    Arrow,
    TextBadge,
}

/// Annotation drawn onto a page by simulated execution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Overlay {
    pub marker: MarkerKind,
    pub bbox: BoundingBox,
    pub color: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl Overlay {
    pub fn is_well_formed(&self) -> bool {
        match self.marker {
            MarkerKind::Arrow => self
                .payload
                .as_deref()
                .is_some_and(|p| p.parse::<crate::action::Direction>().is_ok()),
            MarkerKind::TextBadge => self.payload.as_deref().is_some_and(|p| !p.is_empty()),
            MarkerKind::BoxHighlight => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub page_id: String,
    pub equivalence_class: String,
    /// Screenshot reference shown to model-backed policies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default)]
    pub elements: Vec<Element>,
    #[serde(default)]
    pub action_space: Vec<Action>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overlays: Vec<Overlay>,
}

impl Page {
    /// A page whose element tree is one leaf per action-space element.
    pub fn from_actions(
        page_id: impl Into<String>,
        equivalence_class: impl Into<String>,
        action_space: Vec<Action>,
    ) -> Self {
        let mut elements: Vec<Element> = Vec::new();
        for a in &action_space {
            if let (Some(name), Some(bbox)) = (a.element(), a.bbox()) {
                if !elements.iter().any(|e| e.name == name && e.bbox == *bbox) {
                    elements.push(Element::leaf(name, *bbox));
                }
            }
        }
        Self {
            page_id: page_id.into(),
            equivalence_class: equivalence_class.into(),
            image_path: None,
            elements,
            action_space,
            overlays: Vec::new(),
        }
    }

    pub fn with_image(mut self, path: impl Into<String>) -> Self {
        self.image_path = Some(path.into());
        self
    }

    /// Stable digest of the page structure (element names and boxes plus
    /// the action space), used as identity when a dataset carries no
    /// equivalence classes.
    pub fn structural_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut flat = Vec::new();
        for e in &self.elements {
            e.walk(&mut flat);
        }
        for e in flat {
            h.update(b"E");
            h.update(e.name.as_bytes());
            h.update(b"\0");
            h.update(e.bbox.to_string().as_bytes());
        }
        for a in &self.action_space {
            h.update(b"A");
            h.update(a.canonical().as_bytes());
            h.update(b"\0");
        }
        let digest = h.finalize();
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("struct:{hex}")
    }

    /// Same observable state: same equivalence class and same overlays.
    pub fn same_state(&self, other: &Page) -> bool {
        self.equivalence_class == other.equivalence_class && self.overlays == other.overlays
    }

    pub fn contains_action(&self, action: &Action) -> bool {
        self.action_space.contains(action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub instruction: String,
    pub start_page: String,
    pub golden_actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_final_class: Option<String>,
}

impl Task {
    /// Golden action expected after `step` adopted actions. Past the end of
    /// the golden list the task is expected to terminate.
    pub fn golden_at(&self, step: usize) -> &Action {
        self.golden_actions.get(step).unwrap_or(&Action::Complete)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub page_id: String,
    pub action: Candidate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_page: String,
}

impl Trajectory {
    pub fn actions(&self) -> impl Iterator<Item = &Candidate> {
        self.steps.iter().map(|s| &s.action)
    }

    /// Every page the trajectory visited, in order, including the final one.
    pub fn visited_pages(&self) -> impl Iterator<Item = &str> {
        self.steps
            .iter()
            .map(|s| s.page_id.as_str())
            .chain(std::iter::once(self.final_page.as_str()))
    }
}
