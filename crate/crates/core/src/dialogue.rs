//! Running a system session against a user agent and the resulting log.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{BeliefState, BookingRecord};
use crate::engine::{Session, TurnTrace};
use crate::llm::{CompletionBackend, Usage};
use crate::sim::{Goal, SystemAct, UserAct};

/// Turn cap per dialogue.
pub const DEFAULT_MAX_TURNS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTurn {
    pub text: String,
    pub acts: Vec<UserAct>,
    /// The user said goodbye; the system answers once more and the
    /// dialogue ends.
    pub done: bool,
}

/// The user side of a dialogue.
pub trait UserAgent {
    fn goal(&self) -> &Goal;
    fn next_user_utterance(&mut self) -> UserTurn;
    /// Reads the system reply, updates internal state and returns the
    /// system acts recognized in it.
    fn update(&mut self, system_text: &str) -> Vec<SystemAct>;
    /// Goal domains given up on.
    fn abandoned(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedTurn {
    pub user: String,
    #[serde(default)]
    pub user_acts: Vec<UserAct>,
    pub system: String,
    /// `None` until the turn is annotated.
    pub system_acts: Option<Vec<SystemAct>>,
    pub trace: Option<TurnTrace>,
    pub belief: BeliefState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    UserDone,
    MaxTurns,
    BackendFailure { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueLog {
    pub goal: Goal,
    pub turns: Vec<LoggedTurn>,
    pub usage: Usage,
    pub termination: Termination,
    #[serde(default)]
    pub abandoned: Vec<String>,
    #[serde(default)]
    pub bookings: Vec<BookingRecord>,
}

impl DialogueLog {
    pub fn new(goal: Goal) -> Self {
        DialogueLog {
            goal,
            turns: Vec::new(),
            usage: Usage::default(),
            termination: Termination::MaxTurns,
            abandoned: Vec::new(),
            bookings: Vec::new(),
        }
    }
}

/// A dialogue cut short by a fatal backend error, with everything logged
/// up to the failing turn.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("dialogue aborted after {} turn(s): {message}", .log.turns.len())]
pub struct DialogueFailure {
    pub log: DialogueLog,
    pub message: String,
}

/// Alternates user and system turns until the user says goodbye or
/// `max_turns` user turns have been played.
#[allow(clippy::result_large_err)]
pub fn run_dialogue(
    session: &mut Session,
    user: &mut dyn UserAgent,
    backend: &dyn CompletionBackend,
    max_turns: usize,
) -> Result<DialogueLog, DialogueFailure> {
    let mut log = DialogueLog::new(user.goal().clone());
    for _ in 0..max_turns {
        let turn = user.next_user_utterance();
        let result = match session.run_turn(&turn.text, backend) {
            Ok(r) => r,
            Err(e) => {
                let message = e.to_string();
                log.termination = Termination::BackendFailure { message: message.clone() };
                log.abandoned = user.abandoned();
                log.bookings = session.ledger().issued().to_vec();
                return Err(DialogueFailure { log, message });
            }
        };
        let acts = user.update(&result.answer);
        log.usage += result.trace.usage;
        log.turns.push(LoggedTurn {
            user: turn.text,
            user_acts: turn.acts,
            system: result.answer,
            system_acts: Some(acts),
            trace: Some(result.trace),
            belief: result.belief,
        });
        if turn.done {
            log.termination = Termination::UserDone;
            break;
        }
    }
    log.abandoned = user.abandoned();
    log.bookings = session.ledger().issued().to_vec();
    Ok(log)
}
