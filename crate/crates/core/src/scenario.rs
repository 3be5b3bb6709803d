//! Replayable dialogue fixtures: a goal, user utterances and the exact
//! model completions of every turn.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::DomainDatabase;
use crate::dialogue::{run_dialogue, DialogueFailure, DialogueLog};
use crate::engine::{EngineConfig, ExemplarMode, Session};
use crate::eval::IssueKind;
use crate::llm::ScriptedBackend;
use crate::sim::{Goal, ScriptedUser, SystemActKind};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario {name}: {message}")]
    Invalid { name: String, message: String },
    #[error("no bundled scenario named '{0}'")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioTurn {
    pub user: String,
    pub completions: Vec<String>,
    /// Hand-labeled system acts of the reply, when audited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acts: Option<Vec<SystemActKind>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub goal: Goal,
    #[serde(default)]
    pub expected_issues: Vec<IssueKind>,
    pub turns: Vec<ScenarioTurn>,
}

const BUNDLED: [(&str, &str); 10] = [
    ("hotel_exemplar", include_str!("../fixtures/scenarios/hotel_exemplar.toml")),
    ("police_simple_goal", include_str!("../fixtures/scenarios/police_simple_goal.toml")),
    ("hallucinated_slot", include_str!("../fixtures/scenarios/hallucinated_slot.toml")),
    ("role_switch", include_str!("../fixtures/scenarios/role_switch.toml")),
    ("creative_booking", include_str!("../fixtures/scenarios/creative_booking.toml")),
    ("direct_booking", include_str!("../fixtures/scenarios/direct_booking.toml")),
    ("clarify_booking", include_str!("../fixtures/scenarios/clarify_booking.toml")),
    ("wrong_slot_fill", include_str!("../fixtures/scenarios/wrong_slot_fill.toml")),
    ("premature_booking", include_str!("../fixtures/scenarios/premature_booking.toml")),
    ("invalid_domain", include_str!("../fixtures/scenarios/invalid_domain.toml")),
];

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError::Invalid { name: "<toml>".into(), message: e.to_string() })?;
        if scenario.turns.is_empty() {
            return Err(ScenarioError::Invalid { name: scenario.name, message: "no turns".into() });
        }
        if let Some(i) = scenario.turns.iter().position(|t| t.completions.is_empty()) {
            return Err(ScenarioError::Invalid { name: scenario.name, message: format!("turn {i} has no completions") });
        }
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// The fixtures shipped with the crate, in a fixed order.
    pub fn bundled() -> Vec<Scenario> {
        BUNDLED.iter().map(|(_, text)| Self::from_toml(text).expect("bundled scenario parses")).collect()
    }

    pub fn bundled_named(name: &str) -> Result<Scenario, ScenarioError> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml(text).expect("bundled scenario parses"))
            .ok_or_else(|| ScenarioError::Unknown(name.to_string()))
    }

    pub fn bundled_names() -> Vec<&'static str> {
        BUNDLED.iter().map(|(n, _)| *n).collect()
    }

    pub fn validate(&self, db: &DomainDatabase) -> Result<(), ScenarioError> {
        self.goal.validate(db).map_err(|message| ScenarioError::Invalid { name: self.name.clone(), message })
    }

    pub fn backend(&self) -> ScriptedBackend {
        ScriptedBackend::new(self.turns.iter().flat_map(|t| t.completions.iter().cloned()))
    }

    pub fn user(&self, db: Arc<DomainDatabase>) -> ScriptedUser {
        ScriptedUser::new(self.goal.clone(), db, self.turns.iter().map(|t| t.user.clone()))
    }

    /// Plays the scenario through a fresh session with the generic
    /// exemplar.
    #[allow(clippy::result_large_err)]
    pub fn replay(&self, db: Arc<DomainDatabase>, config: EngineConfig) -> Result<DialogueLog, DialogueFailure> {
        let domains = self.goal.domain_names();
        let mut session = Session::with_mode(db.clone(), ExemplarMode::Generic, Some(&domains), config);
        let mut user = self.user(db);
        run_dialogue(&mut session, &mut user, &self.backend(), self.turns.len())
    }
}
