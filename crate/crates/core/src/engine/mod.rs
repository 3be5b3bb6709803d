//! The system agent: prompt assembly, completion, parsing and tool dispatch
//! until the model produces a final answer.

pub mod parse;
pub mod prompt;
pub mod tools;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{BeliefState, BookingLedger, DomainDatabase, SlotPolicy};
use crate::llm::{BackendError, CompletionBackend, CompletionRequest, Usage};

pub use parse::{contains_marker, parse_step, AgentStep, ParseFailure, ParseFailureKind, ParsedOutput};
pub use prompt::{
    render_history, render_scratchpad, ExemplarChoice, ExemplarLibrary, ExemplarMode, PromptError, PromptParts,
    PromptTemplate, Role, Utterance,
};
pub use tools::{query_args, CallStatus, QueryArgs, QueryRecord, ToolCall, ToolContext, ToolSpec, Toolkit, ToolkitError};

/// Answer given when a turn ends without a usable final answer.
pub const FALLBACK_ANSWER: &str = "I'm sorry, I was unable to process that request.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_steps: usize,
    pub max_parse_retries: usize,
    pub slot_policy: SlotPolicy,
    pub model: String,
    pub max_tokens: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_steps: 8,
            max_parse_retries: 2,
            slot_policy: SlotPolicy::Strict,
            model: "scripted".into(),
            max_tokens: 512,
        }
    }
}

/// Why a turn ended with the fallback answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    StepCap,
    ParseFailures,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub steps: Vec<AgentStep>,
    pub raw_outputs: Vec<String>,
    pub tool_calls: Vec<ToolCall>,
    pub usage: Usage,
    pub parse_retries: usize,
    /// Completions that could not be parsed, verbatim.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parse_failures: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Fallback>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnResult {
    pub answer: String,
    pub trace: TurnTrace,
    pub belief: BeliefState,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One conversation with the system agent.
pub struct Session {
    db: Arc<DomainDatabase>,
    toolkit: Toolkit,
    template: PromptTemplate,
    exemplar: String,
    history: Vec<Utterance>,
    beliefs: Vec<BeliefState>,
    ledger: BookingLedger,
    config: EngineConfig,
}

impl Session {
    pub fn new(db: Arc<DomainDatabase>, exemplar: impl Into<String>, config: EngineConfig) -> Self {
        Session {
            db,
            toolkit: Toolkit::standard(),
            template: PromptTemplate::bundled(),
            exemplar: exemplar.into(),
            history: Vec::new(),
            beliefs: Vec::new(),
            ledger: BookingLedger::new(),
            config,
        }
    }

    /// A session using the bundled template and the exemplar picked for
    /// `goal_domains` under `mode`.
    pub fn with_mode(
        db: Arc<DomainDatabase>,
        mode: ExemplarMode,
        goal_domains: Option<&[&str]>,
        config: EngineConfig,
    ) -> Self {
        let choice = ExemplarLibrary::bundled().select(mode, goal_domains);
        Self::new(db, choice.text, config)
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn with_toolkit(mut self, toolkit: Toolkit) -> Self {
        self.toolkit = toolkit;
        self
    }

    pub fn db(&self) -> &DomainDatabase {
        &self.db
    }

    pub fn history(&self) -> &[Utterance] {
        &self.history
    }

    pub fn beliefs(&self) -> &[BeliefState] {
        &self.beliefs
    }

    pub fn ledger(&self) -> &BookingLedger {
        &self.ledger
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn toolkit(&self) -> &Toolkit {
        &self.toolkit
    }

    pub fn turn_index(&self) -> usize {
        self.history.len() / 2
    }

    pub fn assemble_prompt(&self, input: &str, scratchpad: &[AgentStep]) -> String {
        let tools = self.toolkit.render_descriptions();
        let names = self.toolkit.render_names();
        let history = render_history(&self.history);
        let scratch = render_scratchpad(scratchpad);
        self.template.render(&PromptParts {
            tools: &tools,
            tool_names: &names,
            examples: &self.exemplar,
            history: &history,
            input,
            agent_scratchpad: &scratch,
        })
    }

    /// Runs one system turn for `user_text`.
    ///
    /// On a backend error the session is left unchanged.
    pub fn run_turn(&mut self, user_text: &str, backend: &dyn CompletionBackend) -> Result<TurnResult, EngineError> {
        let names = self.toolkit.names();
        let names: Vec<&str> = names.to_vec();
        let mut ledger = self.ledger.clone();
        ledger.set_turn(self.turn_index());
        let mut trace = TurnTrace::default();
        let mut answer = None;

        for _ in 0..self.config.max_steps {
            let mut request = CompletionRequest::new(self.assemble_prompt(user_text, &trace.steps), self.config.model.clone());
            request.max_tokens = self.config.max_tokens;
            let completion = backend.complete(&request)?;
            trace.usage += completion.usage;
            trace.raw_outputs.push(completion.text.clone());

            let parsed = parse_step(&completion.text, &names).and_then(|p| match p.step {
                AgentStep::Action { .. } | AgentStep::FinalAnswer { .. } => Ok(p),
                _ => Err(ParseFailure::new(ParseFailureKind::NoMarker, &names)),
            });
            match parsed {
                Ok(ParsedOutput { thought, step }) => {
                    if let Some(t) = thought {
                        trace.steps.push(AgentStep::thought(t));
                    }
                    match step {
                        AgentStep::FinalAnswer { text } => {
                            trace.steps.push(AgentStep::final_answer(text.clone()));
                            answer = Some(text);
                            break;
                        }
                        AgentStep::Action { tool, input } => {
                            let mut ctx = ToolContext { db: &self.db, ledger: &mut ledger, policy: self.config.slot_policy };
                            let call = self.toolkit.dispatch(&tool, &input, &mut ctx);
                            trace.steps.push(AgentStep::action(tool, input));
                            trace.steps.push(AgentStep::observation(call.observation.clone()));
                            trace.tool_calls.push(call);
                        }
                        _ => unreachable!("filtered above"),
                    }
                }
                Err(failure) => {
                    trace.parse_failures.push(completion.text.clone());
                    if trace.parse_retries >= self.config.max_parse_retries {
                        trace.fallback = Some(Fallback::ParseFailures);
                        break;
                    }
                    trace.parse_retries += 1;
                    let raw = completion.text.trim();
                    let raw = raw.strip_prefix("Thought:").unwrap_or(raw).trim();
                    trace.steps.push(AgentStep::thought(raw));
                    trace.steps.push(AgentStep::observation(failure.message));
                }
            }
        }

        let answer = match answer {
            Some(a) => a,
            None => {
                trace.fallback.get_or_insert(Fallback::StepCap);
                trace.steps.push(AgentStep::final_answer(FALLBACK_ANSWER));
                FALLBACK_ANSWER.to_string()
            }
        };

        let belief = self.next_belief(&trace);
        self.ledger = ledger;
        self.beliefs.push(belief.clone());
        self.history.push(Utterance { role: Role::User, text: user_text.to_string() });
        self.history.push(Utterance { role: Role::System, text: answer.clone() });
        Ok(TurnResult { answer, trace, belief })
    }

    /// The previous snapshot with the last schema-valid query of this turn
    /// written over its domain.
    fn next_belief(&self, trace: &TurnTrace) -> BeliefState {
        let mut belief = self.beliefs.last().cloned().unwrap_or_default();
        if let Some(q) = trace.tool_calls.iter().rev().filter_map(|c| c.query.as_ref()).find(|q| q.schema_valid) {
            belief.constraints.insert(q.domain.clone(), q.constraints.clone());
        }
        belief
    }
}
