//! Rule-based validity checks on an executed candidate.
//!
//! Rules, in precedence order:
//! 1. the candidate parses under the action grammar;
//! 2. when the environment exposes action spaces, the action is one of them;
//! 3. unless it completes the task, executing it changes the page.

use serde::{Deserialize, Serialize};

use crate::action::Candidate;
use crate::environment::EnvironmentGraph;
use crate::page::Page;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleFailure {
    Malformed,
    NotInActionSpace,
    NoEnvironmentChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_failed: Option<RuleFailure>,
}

impl VerifierVerdict {
    pub const VALID: VerifierVerdict = VerifierVerdict {
        valid: true,
        rule_failed: None,
    };

    pub fn failed(rule: RuleFailure) -> Self {
        Self {
            valid: false,
            rule_failed: Some(rule),
        }
    }
}

pub fn verify(before: &Page, after: &Page, candidate: &Candidate, graph: Option<&EnvironmentGraph>) -> VerifierVerdict {
    let Some(action) = candidate.action() else {
        return VerifierVerdict::failed(RuleFailure::Malformed);
    };
    if action.is_complete() {
        return VerifierVerdict::VALID;
    }
    if let Some(g) = graph {
        let space = g.action_space_of(&before.page_id).unwrap_or(&before.action_space);
        if !space.contains(action) {
            return VerifierVerdict::failed(RuleFailure::NotInActionSpace);
        }
    }
    if before.same_state(after) {
        return VerifierVerdict::failed(RuleFailure::NoEnvironmentChange);
    }
    VerifierVerdict::VALID
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{parse_action, Action};
    use crate::environment::{step_simulated, Edge};

    fn a(s: &str) -> Action {
        parse_action(s).unwrap()
    }

    fn graph() -> EnvironmentGraph {
        let go = a(r#"click("go",[0,0][10,10])"#);
        let stay = a(r#"click("refresh",[0,20][10,30])"#);
        EnvironmentGraph::new(
            vec![
                Page::from_actions("home", "H", vec![go.clone(), stay.clone()]),
                Page::from_actions("home2", "H", vec![go.clone(), stay.clone()]),
                Page::from_actions("next", "N", vec![]),
            ],
            vec![
                Edge {
                    source: "home".into(),
                    action: go,
                    target: "next".into(),
                },
                Edge {
                    source: "home".into(),
                    action: stay,
                    target: "home2".into(),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn valid_when_page_changes() {
        let g = graph();
        let go = a(r#"click("go",[0,0][10,10])"#);
        let o = g.step_actual("home", &go).unwrap();
        let v = verify(g.page("home").unwrap(), &o.next_page, &go.into(), Some(&g));
        assert_eq!(v, VerifierVerdict::VALID);
    }

    #[test]
    fn equivalent_page_is_no_change() {
        let g = graph();
        let stay = a(r#"click("refresh",[0,20][10,30])"#);
        let o = g.step_actual("home", &stay).unwrap();
        assert_eq!(o.next_page.page_id, "home2");
        let v = verify(g.page("home").unwrap(), &o.next_page, &stay.into(), Some(&g));
        assert_eq!(v, VerifierVerdict::failed(RuleFailure::NoEnvironmentChange));
    }

    #[test]
    fn complete_on_identical_pages_is_valid() {
        let g = graph();
        let home = g.page("home").unwrap();
        assert_eq!(
            verify(home, home, &Action::Complete.into(), Some(&g)),
            VerifierVerdict::VALID
        );
        assert_eq!(
            verify(home, home, &Action::Complete.into(), None),
            VerifierVerdict::VALID
        );
    }

    #[test]
    fn malformed_takes_precedence() {
        let g = graph();
        let home = g.page("home").unwrap();
        let next = g.page("next").unwrap();
        let bad = Candidate::from_text("click(\"go\",[0,0][10,10]");
        for after in [home, next] {
            for graph in [Some(&g), None] {
                assert_eq!(
                    verify(home, after, &bad, graph),
                    VerifierVerdict::failed(RuleFailure::Malformed)
                );
            }
        }
    }

    #[test]
    fn out_of_space_beats_no_change() {
        let g = graph();
        let home = g.page("home").unwrap();
        let stranger = a(r#"click("elsewhere",[50,50][60,60])"#);
        assert_eq!(
            verify(home, home, &stranger.clone().into(), Some(&g)),
            VerifierVerdict::failed(RuleFailure::NotInActionSpace)
        );
        // without an action space the rule is skipped and rule 3 applies
        assert_eq!(
            verify(home, home, &stranger.clone().into(), None),
            VerifierVerdict::failed(RuleFailure::NoEnvironmentChange)
        );
        let sim = step_simulated(home, &stranger);
        assert_eq!(
            verify(home, &sim.next_page, &stranger.into(), None),
            VerifierVerdict::VALID
        );
    }

    #[test]
    fn simulated_overlay_counts_as_change() {
        let g = graph();
        let home = g.page("home").unwrap();
        let go = a(r#"click("go",[0,0][10,10])"#);
        let sim = step_simulated(home, &go);
        assert_eq!(
            verify(home, &sim.next_page, &go.into(), Some(&g)),
            VerifierVerdict::VALID
        );
    }
}
