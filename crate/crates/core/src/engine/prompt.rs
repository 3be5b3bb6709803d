//! Prompt template, exemplar library and rendering of history/scratchpad.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::AgentStep;

pub const PLACEHOLDERS: [&str; 6] = ["tools", "tool_names", "examples", "history", "input", "agent_scratchpad"];

const BUNDLED_TEMPLATE: &str = include_str!("../../assets/prompt.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("placeholder {{{name}}} appears {count} times; expected exactly once")]
    Placeholder { name: &'static str, count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

/// Values substituted into the template.
#[derive(Debug, Clone, Copy)]
pub struct PromptParts<'a> {
    pub tools: &'a str,
    pub tool_names: &'a str,
    pub examples: &'a str,
    pub history: &'a str,
    pub input: &'a str,
    pub agent_scratchpad: &'a str,
}

impl PromptParts<'_> {
    fn value(&self, name: &str) -> &str {
        match name {
            "tools" => self.tools,
            "tool_names" => self.tool_names,
            "examples" => self.examples,
            "history" => self.history,
            "input" => self.input,
            "agent_scratchpad" => self.agent_scratchpad,
            _ => unreachable!("unknown placeholder {name}"),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        for name in PLACEHOLDERS {
            let count = text.matches(&format!("{{{name}}}")).count();
            if count != 1 {
                return Err(PromptError::Placeholder { name, count });
            }
        }
        Ok(PromptTemplate { text })
    }

    pub fn bundled() -> Self {
        Self::new(BUNDLED_TEMPLATE).expect("bundled template is valid")
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes all placeholders in one left-to-right pass, so
    /// substituted text (user input, observations) is never re-expanded.
    pub fn render(&self, parts: &PromptParts<'_>) -> String {
        let mut out = String::with_capacity(self.text.len() + parts.examples.len() + parts.agent_scratchpad.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            let hit = PLACEHOLDERS.iter().find(|name| {
                tail.len() > name.len() + 1 && tail[1..].starts_with(*name) && tail[1 + name.len()..].starts_with('}')
            });
            match hit {
                Some(name) => {
                    out.push_str(parts.value(name));
                    rest = &tail[name.len() + 2..];
                }
                None => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    System,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::User => "User",
            Role::System => "System",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
}

/// One `Role: text` line per utterance.
pub fn render_history(history: &[Utterance]) -> String {
    history.iter().map(|u| format!("{}: {}", u.role, u.text)).collect::<Vec<_>>().join("\n")
}

/// Steps one per line; a non-empty scratchpad ends with a `Thought:` cursor
/// for the model to continue from.
pub fn render_scratchpad(steps: &[AgentStep]) -> String {
    if steps.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    for step in steps {
        out.push_str(&step.to_string());
        out.push('\n');
    }
    out.push_str("Thought:");
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarMode {
    /// The fixed two-turn hotel example.
    #[default]
    Generic,
    /// Examples for the domains of the user's goal.
    #[serde(alias = "domain")]
    DomainSpecific,
}

impl std::str::FromStr for ExemplarMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "generic" => Ok(ExemplarMode::Generic),
            "domain" | "domain_specific" | "domain-specific" => Ok(ExemplarMode::DomainSpecific),
            other => Err(format!("unknown exemplar mode '{other}' (expected generic or domain)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarLibrary {
    pub generic: String,
    pub per_domain: IndexMap<String, String>,
}

/// The chosen exemplar text, plus a warning when domain-specific selection
/// had to fall back to the generic example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarChoice {
    pub text: String,
    pub warning: Option<String>,
}

impl ExemplarLibrary {
    pub fn bundled() -> Self {
        let per_domain: IndexMap<String, String> = [
            ("restaurant", include_str!("../../assets/exemplars/restaurant.txt")),
            ("hotel", include_str!("../../assets/exemplars/hotel.txt")),
            ("attraction", include_str!("../../assets/exemplars/attraction.txt")),
            ("train", include_str!("../../assets/exemplars/train.txt")),
            ("hospital", include_str!("../../assets/exemplars/hospital.txt")),
            ("taxi", include_str!("../../assets/exemplars/taxi.txt")),
            ("police", include_str!("../../assets/exemplars/police.txt")),
        ]
        .into_iter()
        .map(|(d, t)| (d.to_string(), t.to_string()))
        .collect();
        ExemplarLibrary { generic: per_domain["hotel"].clone(), per_domain }
    }

    pub fn select(&self, mode: ExemplarMode, goal_domains: Option<&[&str]>) -> ExemplarChoice {
        let generic = || ExemplarChoice { text: self.generic.clone(), warning: None };
        match (mode, goal_domains) {
            (ExemplarMode::Generic, _) => generic(),
            (ExemplarMode::DomainSpecific, None) => ExemplarChoice {
                text: self.generic.clone(),
                warning: Some("domain-specific exemplars need a goal; using the generic exemplar".into()),
            },
            (ExemplarMode::DomainSpecific, Some(domains)) => {
                let mut texts = Vec::with_capacity(domains.len());
                for d in domains {
                    match self.per_domain.get(*d) {
                        Some(t) => texts.push(t.as_str()),
                        None => {
                            let warning = format!("no exemplar for domain '{d}'; using the generic exemplar");
                            tracing::warn!("{warning}");
                            return ExemplarChoice { text: self.generic.clone(), warning: Some(warning) };
                        }
                    }
                }
                if texts.is_empty() {
                    return generic();
                }
                ExemplarChoice { text: texts.join("\n"), warning: None }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::Doc;

    fn parts<'a>(history: &'a str, input: &'a str, scratch: &'a str) -> PromptParts<'a> {
        PromptParts { tools: "T", tool_names: "a, b", examples: "E", history, input, agent_scratchpad: scratch }
    }

    #[test]
    fn template_requires_each_placeholder_once() {
        assert!(PromptTemplate::new("{tools}{tool_names}{examples}{history}{input}{agent_scratchpad}").is_ok());
        assert_eq!(
            PromptTemplate::new("{tools}{tool_names}{examples}{history}{input}").unwrap_err(),
            PromptError::Placeholder { name: "agent_scratchpad", count: 0 }
        );
        assert!(PromptTemplate::new("{tools}{tools}{tool_names}{examples}{history}{input}{agent_scratchpad}").is_err());
    }

    #[test]
    fn empty_history_and_scratchpad_end_with_question() {
        let prompt = PromptTemplate::bundled().render(&parts("", "hello", ""));
        assert!(prompt.ends_with("Question: hello\n"), "{prompt:?}");
        assert!(prompt.contains("should be one of [a, b]"));
    }

    #[test]
    fn substitution_is_single_pass() {
        let prompt = PromptTemplate::bundled().render(&parts("", "{tools} {history}", ""));
        assert!(prompt.ends_with("Question: {tools} {history}\n"));
    }

    #[test]
    fn history_in_order() {
        let history = vec![
            Utterance { role: Role::User, text: "hi".into() },
            Utterance { role: Role::System, text: "hello".into() },
        ];
        let rendered = render_history(&history);
        assert_eq!(rendered, "User: hi\nSystem: hello");
        let prompt = PromptTemplate::bundled().render(&parts(&rendered, "q", ""));
        assert!(prompt.contains("Chat history:\nUser: hi\nSystem: hello\nQuestion: q\n"));
    }

    #[test]
    fn scratchpad_lines_before_cursor() {
        let steps = vec![
            AgentStep::thought("find domains"),
            AgentStep::action("list_domains", Doc::empty_map()),
            AgentStep::observation("[hotel]"),
        ];
        assert_eq!(
            render_scratchpad(&steps),
            "Thought: find domains\nAction: list_domains\nInput: {}\nObservation: [hotel]\nThought:"
        );
    }

    #[test]
    fn exemplar_selection() {
        let lib = ExemplarLibrary::bundled();
        let generic = lib.select(ExemplarMode::Generic, Some(&["police"]));
        assert!(generic.text.contains("bridge guest house"));
        let police = lib.select(ExemplarMode::DomainSpecific, Some(&["police"]));
        assert_eq!(police.text, lib.per_domain["police"]);
        let both = lib.select(ExemplarMode::DomainSpecific, Some(&["hotel", "train"]));
        assert_eq!(both.text, format!("{}\n{}", lib.per_domain["hotel"], lib.per_domain["train"]));
        let unknown = lib.select(ExemplarMode::DomainSpecific, Some(&["spaceport"]));
        assert_eq!(unknown.text, lib.generic);
        assert!(unknown.warning.is_some());
    }
}
