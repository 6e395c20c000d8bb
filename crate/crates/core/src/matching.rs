//! Step-level match predicates used by the evaluator, the oracle policies
//! and the dataset builder.

use serde::{Deserialize, Serialize};

use crate::action::{iou, Action, Candidate};
use crate::text::text_f1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Minimum IoU (inclusive) for the box channel.
    pub iou_threshold: f64,
    /// Text F1 must be strictly greater than this.
    pub f1_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.86,
            f1_threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMatch {
    pub iou: bool,
    pub text: bool,
}

impl StepMatch {
    pub const NONE: StepMatch = StepMatch {
        iou: false,
        text: false,
    };

    pub fn both(&self) -> bool {
        self.iou && self.text
    }
}

pub fn step_matches(generated: &Action, golden: &Action, cfg: &MatchConfig) -> StepMatch {
    if generated.kind() != golden.kind() || generated.direction() != golden.direction() {
        return StepMatch::NONE;
    }
    let iou_ok = match (generated.bbox(), golden.bbox()) {
        (None, None) => true,
        (Some(a), Some(b)) => iou(a, b) >= cfg.iou_threshold,
        _ => false,
    };
    let text_ok = match (generated.textual_content(), golden.textual_content()) {
        (None, None) => true,
        (Some(a), Some(b)) => text_f1(a, b) > cfg.f1_threshold,
        _ => false,
    };
    StepMatch {
        iou: iou_ok,
        text: text_ok,
    }
}

/// Malformed candidates match nothing.
pub fn candidate_matches(generated: &Candidate, golden: &Action, cfg: &MatchConfig) -> StepMatch {
    match generated.action() {
        Some(a) => step_matches(a, golden, cfg),
        None => StepMatch::NONE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{parse_action, BoundingBox, Direction};

    fn a(s: &str) -> Action {
        parse_action(s).unwrap()
    }

    fn bb(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn same_box_different_text() {
        let g = a(r#"input("search",[0,0][100,50],"Gold Price")"#);
        let t = a(r#"input("search",[0,0][100,50],"Today's Gold Price")"#);
        let m = step_matches(&g, &t, &MatchConfig::default());
        assert_eq!((m.iou, m.text), (true, false));
    }

    #[test]
    fn disjoint_box_same_text() {
        let g = a(r#"click("Black tea Latte",[0,100][100,150])"#);
        let t = a(r#"click("Black tea Latte",[0,200][100,250])"#);
        let m = step_matches(&g, &t, &MatchConfig::default());
        assert_eq!((m.iou, m.text), (false, true));
    }

    #[test]
    fn identical_and_complete() {
        let g = a(r#"scroll("Customize",[0,1474][1080,2400],"up")"#);
        assert!(step_matches(&g, &g, &MatchConfig::default()).both());
        assert!(step_matches(&Action::Complete, &Action::Complete, &MatchConfig::default()).both());
        assert_eq!(
            step_matches(&g, &Action::Complete, &MatchConfig::default()),
            StepMatch::NONE
        );
    }

    #[test]
    fn scroll_direction_gates_both_channels() {
        let up = Action::scroll("Customize", bb(0, 0, 10, 10), Direction::Up).unwrap();
        let down = Action::scroll("Customize", bb(0, 0, 10, 10), Direction::Down).unwrap();
        assert_eq!(step_matches(&up, &down, &MatchConfig::default()), StepMatch::NONE);
    }

    #[test]
    fn iou_threshold_is_inclusive() {
        // 86 x 100 inside 100 x 100 gives IoU exactly 0.86
        let g = a(r#"click("x",[0,0][100,100])"#);
        let t = a(r#"click("x",[0,0][86,100])"#);
        assert!(step_matches(&t, &g, &MatchConfig::default()).iou);
        let t = a(r#"click("x",[0,0][85,100])"#);
        assert!(!step_matches(&t, &g, &MatchConfig::default()).iou);
    }

    #[test]
    fn kind_mismatch_fails() {
        let c = a(r#"click("x",[0,0][10,10])"#);
        let i = a(r#"input("x",[0,0][10,10],"x")"#);
        assert_eq!(step_matches(&c, &i, &MatchConfig::default()), StepMatch::NONE);
    }

    #[test]
    fn malformed_candidate_never_matches() {
        let c = Candidate::from_text("click(");
        assert_eq!(
            candidate_matches(&c, &Action::Complete, &MatchConfig::default()),
            StepMatch::NONE
        );
    }
}
