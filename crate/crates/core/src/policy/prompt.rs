//! Prompt templates for the generator, judger and reflector roles.
//!
//! A prompt is a list of segments: text, and page attachments that a
//! vision-language backend turns into images. [`Prompt::to_text`] gives the
//! plain-text form in which attachments appear as `image_path:` lines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PolicyContext;
use crate::action::Action;
use crate::page::Page;

pub const SEPARATOR: &str = "-----------------------------------------------------";

const ACTIONS_HEADER: &str = "The actions you can use are:";
const TASK_HEADER: &str = "You need to complete the following task:";
const HISTORY_HEADER: &str = "The completed actions are as follows:";
const JUDGMENT_INSTRUCTION: &str = "Judgment: Please analyze whether the next action is helpful to further complete the task based on the current status and completed actions.";
const PAGE_CHANGE_HEADER: &str = "The page changes caused by executing the action are as follows:";
const FINAL_JUDGMENT: &str = "Final judgment (whether the next action is helpful to complete the task): (Yes or No)";
const REFLECTION_PREAMBLE: &str = "Reflection: This is not your first attempt to generate the next action. The previous attempts to generate the next action have all failed.";
const ATTEMPTS_HEADER: &str = "Here are some previously generated next actions:";
const REFLECTION_INSTRUCTION: &str = "Please note that you are currently in the middle stage of the trajectory. First, you need to analyze the current state, completed actions, and tasks, and compare them with the previous attempts at the next action. Then, you need to generate a new action that is different from all previously generated next actions.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Judger,
    Reflector,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Judger => "judger",
            Role::Reflector => "reflector",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("prompt for {role:?} is missing slot {slot}")]
pub struct MissingSlot {
    pub role: Role,
    pub slot: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Text(String),
    Image { page_id: String, path: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub role: Role,
    pub segments: Vec<Segment>,
}

impl Prompt {
    pub fn to_text(&self) -> String {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => t.clone(),
                Segment::Image { page_id, path } => {
                    format!("image_path: {}", path.as_deref().unwrap_or(page_id))
                }
            })
            .collect();
        parts.join("\n")
    }

    pub fn attachments(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Image { page_id, .. } => Some(page_id.as_str()),
            Segment::Text(_) => None,
        })
    }
}

struct Builder {
    segments: Vec<Segment>,
    text: Vec<String>,
}

impl Builder {
    fn new() -> Self {
        Self {
            segments: Vec::new(),
            text: Vec::new(),
        }
    }

    fn line(&mut self, s: impl Into<String>) -> &mut Self {
        self.text.push(s.into());
        self
    }

    fn lines<I: IntoIterator<Item = String>>(&mut self, it: I) -> &mut Self {
        self.text.extend(it);
        self
    }

    fn image(&mut self, page: &Page) -> &mut Self {
        self.flush();
        self.segments.push(Segment::Image {
            page_id: page.page_id.clone(),
            path: page.image_path.clone(),
        });
        self
    }

    fn flush(&mut self) {
        if !self.text.is_empty() {
            self.segments.push(Segment::Text(self.text.join("\n")));
            self.text.clear();
        }
    }

    fn finish(mut self, role: Role) -> Prompt {
        self.flush();
        Prompt {
            role,
            segments: self.segments,
        }
    }
}

fn common_head(b: &mut Builder, ctx: &PolicyContext<'_>) {
    b.image(ctx.page)
        .line(SEPARATOR)
        .line(ACTIONS_HEADER)
        .lines(ctx.action_space.iter().map(Action::canonical))
        .line(SEPARATOR)
        .line(TASK_HEADER)
        .line(ctx.task.instruction.clone())
        .line(SEPARATOR)
        .line(HISTORY_HEADER)
        .lines(ctx.history.iter().map(|c| c.display_text()));
}

pub fn render_prompt(role: Role, ctx: &PolicyContext<'_>, candidate: Option<&Action>) -> Result<Prompt, MissingSlot> {
    let missing = |slot| MissingSlot { role, slot };
    let mut b = Builder::new();
    match role {
        Role::Generator => common_head(&mut b, ctx),
        Role::Judger => {
            let candidate = candidate.ok_or(missing("next action"))?;
            let outcome = ctx.outcome_page.ok_or(missing("outcome image"))?;
            common_head(&mut b, ctx);
            b.line(SEPARATOR)
                .line(JUDGMENT_INSTRUCTION)
                .line(format!("Next action: {}", candidate.canonical()))
                .line(PAGE_CHANGE_HEADER)
                .image(outcome)
                .line(SEPARATOR)
                .line(FINAL_JUDGMENT);
        }
        Role::Reflector => {
            if ctx.attempts.is_empty() {
                return Err(missing("next actions"));
            }
            let outcome = ctx.outcome_page.ok_or(missing("outcome image"))?;
            common_head(&mut b, ctx);
            b.line(SEPARATOR)
                .line(REFLECTION_PREAMBLE)
                .line(ATTEMPTS_HEADER)
                .lines(ctx.attempts.iter().map(|c| c.display_text()))
                .line(SEPARATOR)
                .line(PAGE_CHANGE_HEADER)
                .image(outcome)
                .line(REFLECTION_INSTRUCTION);
        }
    }
    Ok(b.finish(role))
}
