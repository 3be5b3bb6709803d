//! The Thought/Action/Input/Observation/Final Answer grammar.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::doc::Doc;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentStep {
    Thought { text: String },
    Action { tool: String, input: Doc },
    Observation { text: String },
    FinalAnswer { text: String },
}

impl AgentStep {
    pub fn thought(text: impl Into<String>) -> Self {
        AgentStep::Thought { text: text.into() }
    }

    pub fn action(tool: impl Into<String>, input: Doc) -> Self {
        AgentStep::Action { tool: tool.into(), input }
    }

    pub fn observation(text: impl Into<String>) -> Self {
        AgentStep::Observation { text: text.into() }
    }

    pub fn final_answer(text: impl Into<String>) -> Self {
        AgentStep::FinalAnswer { text: text.into() }
    }
}

impl fmt::Display for AgentStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentStep::Thought { text } => write!(f, "Thought: {text}"),
            AgentStep::Action { tool, input } => write!(f, "Action: {tool}\nInput: {input}"),
            AgentStep::Observation { text } => write!(f, "Observation: {text}"),
            AgentStep::FinalAnswer { text } => write!(f, "Final Answer: {text}"),
        }
    }
}

/// A parsed completion: the step plus any reasoning written before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOutput {
    pub thought: Option<String>,
    pub step: AgentStep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseFailureKind {
    NoMarker,
    MissingInput,
    UnknownTool(String),
    BadInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    /// Correction fed back to the model as an observation.
    pub message: String,
}

impl ParseFailure {
    pub(crate) fn new(kind: ParseFailureKind, tool_names: &[&str]) -> Self {
        let reason = match &kind {
            ParseFailureKind::NoMarker => "no \"Action:\" or \"Final Answer:\" line found".to_string(),
            ParseFailureKind::MissingInput => "\"Action:\" must be followed by an \"Input:\" line".to_string(),
            ParseFailureKind::UnknownTool(t) => format!("'{t}' is not a valid tool"),
            ParseFailureKind::BadInput(e) => format!("the Input is not a valid JSON object ({e})"),
        };
        let message = format!(
            "Your response could not be parsed: {reason}. Use the exact format: \"Thought: ...\" followed by \
             either \"Action: <one of [{}]>\" and \"Input: <JSON object>\" on the next line, or \
             \"Final Answer: <your reply to the user>\".",
            tool_names.join(", ")
        );
        ParseFailure { kind, message }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Thought,
    Action,
    Input,
    Observation,
    FinalAnswer,
}

const MARKERS: [(&str, Marker); 6] = [
    ("Thought:", Marker::Thought),
    ("Action Input:", Marker::Input),
    ("Action:", Marker::Action),
    ("Input:", Marker::Input),
    ("Observation:", Marker::Observation),
    ("Final Answer:", Marker::FinalAnswer),
];

fn marker_of(line: &str) -> Option<(Marker, &str)> {
    let line = line.trim_start();
    MARKERS.iter().find_map(|(prefix, m)| line.strip_prefix(prefix).map(|rest| (*m, rest)))
}

/// True when some line of `text` would be read as a grammar marker.
pub fn contains_marker(text: &str) -> bool {
    text.lines().any(|l| marker_of(l).is_some())
}

struct Segment<'a> {
    marker: Marker,
    lines: Vec<&'a str>,
}

impl Segment<'_> {
    fn text(&self) -> String {
        self.lines.join("\n").trim().to_string()
    }
}

fn tool_token(raw: &str) -> String {
    let first = raw.lines().next().unwrap_or("").trim();
    let t = first.trim_matches(|c| c == '`' || c == '"' || c == '\'');
    t.strip_suffix("()").unwrap_or(t).trim().to_string()
}

/// Parses one model completion.
///
/// Markers are recognized case-sensitively at line starts. Prose before the
/// first marker and a missing `Thought:` line are tolerated; the prose is
/// kept as the thought. A completion holding only a `Thought:` or only an
/// `Observation:` yields that step, which the agent loop rejects.
pub fn parse_step(raw: &str, tool_names: &[&str]) -> Result<ParsedOutput, ParseFailure> {
    let mut preamble: Vec<&str> = Vec::new();
    let mut segments: Vec<Segment<'_>> = Vec::new();
    for line in raw.lines() {
        match marker_of(line) {
            Some((marker, rest)) => segments.push(Segment { marker, lines: vec![rest] }),
            None => match segments.last_mut() {
                Some(seg) => seg.lines.push(line),
                None => preamble.push(line),
            },
        }
    }
    let preamble = preamble.join("\n").trim().to_string();

    let Some(primary) = segments.iter().position(|s| matches!(s.marker, Marker::Action | Marker::FinalAnswer))
    else {
        return match segments.as_slice() {
            [only] if preamble.is_empty() && only.marker == Marker::Thought => {
                Ok(ParsedOutput { thought: None, step: AgentStep::thought(only.text()) })
            }
            [only] if preamble.is_empty() && only.marker == Marker::Observation => {
                Ok(ParsedOutput { thought: None, step: AgentStep::observation(only.text()) })
            }
            _ => Err(ParseFailure::new(ParseFailureKind::NoMarker, tool_names)),
        };
    };

    let mut thought_parts: Vec<String> = Vec::new();
    if !preamble.is_empty() {
        thought_parts.push(preamble);
    }
    thought_parts.extend(
        segments[..primary].iter().filter(|s| s.marker == Marker::Thought).map(Segment::text).filter(|t| !t.is_empty()),
    );
    let thought = (!thought_parts.is_empty()).then(|| thought_parts.join("\n"));

    let seg = &segments[primary];
    let step = match seg.marker {
        Marker::FinalAnswer => AgentStep::final_answer(seg.text()),
        _ => {
            let tool = tool_token(&seg.text());
            let input_seg = segments
                .get(primary + 1)
                .filter(|s| s.marker == Marker::Input)
                .ok_or_else(|| ParseFailure::new(ParseFailureKind::MissingInput, tool_names))?;
            if !tool_names.contains(&tool.as_str()) {
                return Err(ParseFailure::new(ParseFailureKind::UnknownTool(tool), tool_names));
            }
            let input = parse_input(&input_seg.text())
                .map_err(|e| ParseFailure::new(ParseFailureKind::BadInput(e), tool_names))?;
            AgentStep::action(tool, input)
        }
    };
    Ok(ParsedOutput { thought, step })
}

fn parse_input(text: &str) -> Result<Doc, String> {
    if text.is_empty() {
        return Ok(Doc::empty_map());
    }
    match Doc::parse(text) {
        Ok(doc) => Ok(doc),
        Err(err) => {
            // Models sometimes keep talking after the input document.
            let first = text.lines().next().unwrap_or("");
            if first.len() < text.len() {
                if let Ok(doc) = Doc::parse(first) {
                    return Ok(doc);
                }
            }
            Err(err.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOOLS: [&str; 4] = ["list_domains", "list_slots", "db_query", "get_booking_reference"];

    fn parse(raw: &str) -> Result<ParsedOutput, ParseFailure> {
        parse_step(raw, &TOOLS)
    }

    #[test]
    fn final_answer_with_thought() {
        let out = parse("Thought: done\nFinal Answer: Goodbye! Have a nice day!").unwrap();
        assert_eq!(out.thought.as_deref(), Some("done"));
        assert_eq!(out.step, AgentStep::final_answer("Goodbye! Have a nice day!"));
    }

    #[test]
    fn action_with_empty_input() {
        let out = parse("Thought: t\nAction: list_domains\nInput: {}").unwrap();
        assert_eq!(out.step, AgentStep::action("list_domains", Doc::empty_map()));
        assert_eq!(out.thought.as_deref(), Some("t"));
    }

    #[test]
    fn lenient_forms() {
        let out = parse("The user wants a hotel.\nAction: list_slots\nInput: {domain: hotel}").unwrap();
        assert_eq!(out.thought.as_deref(), Some("The user wants a hotel."));
        let out = parse("Action: `list_slots()`\nAction Input: {\"domain\": \"hotel\"}\nI'll wait.").unwrap();
        assert_eq!(out.step, AgentStep::action("list_slots", Doc::parse("{domain: hotel}").unwrap()));
        let out = parse("Final Answer: line one\nline two").unwrap();
        assert_eq!(out.step, AgentStep::final_answer("line one\nline two"));
    }

    #[test]
    fn failures() {
        assert_eq!(parse("Let me think about booking...").unwrap_err().kind, ParseFailureKind::NoMarker);
        assert_eq!(parse("Thought: a\nAction: db_query").unwrap_err().kind, ParseFailureKind::MissingInput);
        assert_eq!(
            parse("Action: book_hotel\nInput: {}").unwrap_err().kind,
            ParseFailureKind::UnknownTool("book_hotel".into())
        );
        assert!(matches!(
            parse("Action: db_query\nInput: {domain: hotel, state: {hotel: {stars: 3}").unwrap_err().kind,
            ParseFailureKind::BadInput(_)
        ));
        let msg = parse("nothing").unwrap_err().message;
        assert!(msg.starts_with("Your response could not be parsed"));
        assert!(msg.contains("list_domains, list_slots, db_query, get_booking_reference"));
    }

    #[test]
    fn first_primary_marker_wins() {
        let out = parse("Action: list_domains\nInput: {}\nFinal Answer: too early").unwrap();
        assert_eq!(out.step, AgentStep::action("list_domains", Doc::empty_map()));
    }

    fn arb_text() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-zA-Z0-9][a-zA-Z0-9 ,.!?'-]{0,30}", 1..4)
            .prop_map(|lines| lines.join("\n"))
            .prop_filter("no markers", |t| !contains_marker(t))
            .prop_map(|t| t.trim().to_string())
            .prop_filter("non-empty", |t| !t.is_empty())
    }

    fn arb_doc() -> impl Strategy<Value = Doc> {
        let leaf = "[ -~]{1,10}".prop_map(Doc::Scalar);
        leaf.prop_recursive(2, 12, 3, |inner| {
            prop::collection::vec(("[a-z_]{1,8}", inner), 0..3)
                .prop_map(|pairs| Doc::Map(pairs.into_iter().collect()))
        })
        .prop_map(|d| match d {
            Doc::Map(_) => d,
            other => Doc::Map(std::iter::once(("domain".to_string(), other)).collect()),
        })
    }

    pub(crate) fn arb_step() -> impl Strategy<Value = AgentStep> {
        prop_oneof![
            arb_text().prop_map(AgentStep::thought),
            (prop::sample::select(TOOLS.to_vec()), arb_doc()).prop_map(|(t, d)| AgentStep::action(t, d)),
            arb_text().prop_map(AgentStep::observation),
            arb_text().prop_map(AgentStep::final_answer),
        ]
    }

    proptest! {
        #[test]
        fn grammar_round_trip(step in arb_step()) {
            let parsed = parse(&step.to_string()).unwrap();
            prop_assert_eq!(parsed.thought, None);
            prop_assert_eq!(parsed.step, step);
        }
    }
}
