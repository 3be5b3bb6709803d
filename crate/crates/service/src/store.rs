//! Campaign state as a fold over an append-only event stream.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use indexmap::IndexMap;
use react_tod::engine::TurnTrace;
use react_tod::eval::Percent;
use react_tod::sim::Goal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    ReactLlm,
    Baseline,
}

impl SystemKind {
    pub const ALL: [SystemKind; 2] = [SystemKind::ReactLlm, SystemKind::Baseline];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Rated,
    Abandoned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub success: bool,
    pub satisfaction: u8,
}

impl Rating {
    pub fn validate(&self) -> Result<(), StoreError> {
        if (1..=5).contains(&self.satisfaction) {
            Ok(())
        } else {
            Err(StoreError::Invalid(format!("satisfaction must be 1-5, got {}", self.satisfaction)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub user: String,
    pub reply: String,
    /// Agent trace, kept so a session can be rebuilt after a restart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TurnTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSession {
    pub id: String,
    pub system: SystemKind,
    pub goal: Goal,
    pub goal_text: String,
    pub transcript: Vec<TranscriptTurn>,
    pub rating: Option<Rating>,
    pub created_at: DateTime<Utc>,
    pub last_activity: DateTime<Utc>,
}

impl EvalSession {
    pub fn status(&self, now: DateTime<Utc>, idle_limit: Duration) -> SessionStatus {
        if self.rating.is_some() {
            SessionStatus::Rated
        } else if now - self.last_activity > idle_limit {
            SessionStatus::Abandoned
        } else {
            SessionStatus::Open
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated { id: String, system: SystemKind, goal: Goal, goal_text: String, at: DateTime<Utc> },
    Message { id: String, turn: TranscriptTurn, at: DateTime<Utc> },
    Rated { id: String, rating: Rating, at: DateTime<Utc> },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("session '{0}' already exists")]
    Duplicate(String),
    #[error("session '{0}' has already been rated")]
    AlreadyRated(String),
    #[error("session '{0}' was abandoned")]
    Abandoned(String),
    #[error("session '{0}' has no turns to rate")]
    EmptyTranscript(String),
    #[error("{0}")]
    Invalid(String),
    #[error("event log {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("event log {path}, line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system: SystemKind,
    pub dialogues: usize,
    pub avg_turns: String,
    pub satisfaction: Percent,
    pub success: Percent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub systems: Vec<SystemSummary>,
}

/// floor(num / den · 100) / 100, printed with two decimals.
fn truncated_mean(num: u64, den: u64) -> String {
    Percent::from_ratio(num, den.max(1) * 100).to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    sessions: IndexMap<String, EvalSession>,
    idle_limit: Duration,
}

impl Campaign {
    pub fn new(idle_limit: Duration) -> Self {
        Campaign { sessions: IndexMap::new(), idle_limit }
    }

    pub fn replay<'a>(idle_limit: Duration, events: impl IntoIterator<Item = &'a Event>) -> Result<Self, StoreError> {
        let mut campaign = Campaign::new(idle_limit);
        for e in events {
            campaign.apply(e)?;
        }
        Ok(campaign)
    }

    pub fn idle_limit(&self) -> Duration {
        self.idle_limit
    }

    pub fn get(&self, id: &str) -> Option<&EvalSession> {
        self.sessions.get(id)
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// The session, if it still accepts messages.
    pub fn open_session(&self, id: &str, now: DateTime<Utc>) -> Result<&EvalSession, StoreError> {
        let s = self.sessions.get(id).ok_or_else(|| StoreError::UnknownSession(id.to_string()))?;
        match s.status(now, self.idle_limit()) {
            SessionStatus::Open => Ok(s),
            SessionStatus::Rated => Err(StoreError::AlreadyRated(id.to_string())),
            SessionStatus::Abandoned => Err(StoreError::Abandoned(id.to_string())),
        }
    }

    /// Checks an event against the current state without applying it.
    pub fn check(&self, event: &Event) -> Result<(), StoreError> {
        match event {
            Event::SessionCreated { id, .. } => {
                if self.sessions.contains_key(id) {
                    return Err(StoreError::Duplicate(id.clone()));
                }
            }
            Event::Message { id, turn, at } => {
                self.open_session(id, *at)?;
                if turn.user.trim().is_empty() {
                    return Err(StoreError::Invalid("message text is empty".into()));
                }
            }
            Event::Rated { id, rating, at } => {
                rating.validate()?;
                let s = self.open_session(id, *at)?;
                if s.transcript.is_empty() {
                    return Err(StoreError::EmptyTranscript(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), StoreError> {
        self.check(event)?;
        match event {
            Event::SessionCreated { id, system, goal, goal_text, at } => {
                self.sessions.insert(
                    id.clone(),
                    EvalSession {
                        id: id.clone(),
                        system: *system,
                        goal: goal.clone(),
                        goal_text: goal_text.clone(),
                        transcript: Vec::new(),
                        rating: None,
                        created_at: *at,
                        last_activity: *at,
                    },
                );
            }
            Event::Message { id, turn, at } => {
                let s = self.sessions.get_mut(id).expect("checked");
                s.transcript.push(turn.clone());
                s.last_activity = *at;
            }
            Event::Rated { id, rating, at } => {
                let s = self.sessions.get_mut(id).expect("checked");
                s.rating = Some(*rating);
                s.last_activity = *at;
            }
        }
        Ok(())
    }

    /// Means over rated sessions; both systems are always listed.
    pub fn summary(&self) -> CampaignSummary {
        let systems = SystemKind::ALL
            .into_iter()
            .map(|system| {
                let rated: Vec<(&EvalSession, Rating)> = self
                    .sessions
                    .values()
                    .filter(|s| s.system == system)
                    .filter_map(|s| s.rating.map(|r| (s, r)))
                    .collect();
                let n = rated.len() as u64;
                let turns: u64 = rated.iter().map(|(s, _)| s.transcript.len() as u64).sum();
                let satisfaction: u64 = rated.iter().map(|(_, r)| u64::from(r.satisfaction)).sum();
                let successes = rated.iter().filter(|(_, r)| r.success).count() as u64;
                SystemSummary {
                    system,
                    dialogues: rated.len(),
                    avg_turns: truncated_mean(turns, n),
                    satisfaction: Percent::from_ratio(satisfaction, n * 5),
                    success: Percent::from_ratio(successes, n),
                }
            })
            .collect();
        CampaignSummary { systems }
    }
}

/// Append-only JSON-lines event file with a single writer.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>), StoreError> {
        let io = |source| StoreError::Io { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let events = if path.exists() { Self::read(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok((EventLog { path: path.to_path_buf(), file: Mutex::new(file) }, events))
    }

    pub fn read(path: &Path) -> Result<Vec<Event>, StoreError> {
        let file = File::open(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(event);
        }
        Ok(events)
    }

    /// Writes one event as a single line and syncs it to disk.
    pub fn append(&self, event: &Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("event log lock");
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(|source| StoreError::Io { path: self.path.clone(), source })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn created(id: &str, system: SystemKind, at: DateTime<Utc>) -> Event {
        Event::SessionCreated { id: id.into(), system, goal: Goal::default(), goal_text: String::new(), at }
    }

    fn message(id: &str, at: DateTime<Utc>) -> Event {
        Event::Message { id: id.into(), turn: TranscriptTurn { user: "hi".into(), reply: "hello".into(), trace: None }, at }
    }

    fn rated(id: &str, success: bool, satisfaction: u8, at: DateTime<Utc>) -> Event {
        Event::Rated { id: id.into(), rating: Rating { success, satisfaction }, at }
    }

    fn campaign() -> Campaign {
        Campaign::new(Duration::hours(24))
    }

    #[test]
    fn summary_percentages() {
        let t = Utc::now();
        let mut c = campaign();
        // 95 ratings summing to 311, 57 of them successful.
        for i in 0..95 {
            let id = i.to_string();
            c.apply(&created(&id, SystemKind::ReactLlm, t)).unwrap();
            c.apply(&message(&id, t)).unwrap();
            let satisfaction = if i < 26 { 4 } else { 3 };
            c.apply(&rated(&id, i < 57, satisfaction, t)).unwrap();
        }
        let s = &c.summary().systems[0];
        assert_eq!(s.dialogues, 95);
        assert_eq!(s.satisfaction.to_string(), "65.47");
        assert_eq!(s.success.to_string(), "60.00");
        assert_eq!(s.avg_turns, "1.00");
    }

    #[test]
    fn single_rating_and_empty_summary() {
        let t = Utc::now();
        let mut c = campaign();
        let empty = c.summary();
        assert!(empty.systems.iter().all(|s| s.dialogues == 0 && s.satisfaction.to_string() == "0.00"));
        c.apply(&created("a", SystemKind::Baseline, t)).unwrap();
        c.apply(&message("a", t)).unwrap();
        c.apply(&rated("a", false, 3, t)).unwrap();
        let b = &c.summary().systems[1];
        assert_eq!((b.satisfaction.to_string(), b.success.to_string()), ("60.00".into(), "0.00".into()));
    }

    #[test]
    fn state_rules() {
        let t = Utc::now();
        let mut c = campaign();
        c.apply(&created("a", SystemKind::Baseline, t)).unwrap();
        assert!(matches!(c.apply(&created("a", SystemKind::Baseline, t)), Err(StoreError::Duplicate(_))));
        assert!(matches!(c.apply(&rated("a", true, 4, t)), Err(StoreError::EmptyTranscript(_))));
        c.apply(&message("a", t)).unwrap();
        assert!(matches!(c.apply(&rated("a", true, 6, t)), Err(StoreError::Invalid(_))));
        c.apply(&rated("a", true, 4, t)).unwrap();
        assert!(matches!(c.apply(&rated("a", true, 4, t)), Err(StoreError::AlreadyRated(_))));
        assert!(matches!(c.apply(&message("a", t)), Err(StoreError::AlreadyRated(_))));
        assert!(matches!(c.apply(&message("zz", t)), Err(StoreError::UnknownSession(_))));
    }

    #[test]
    fn idle_sessions_are_abandoned() {
        let t = Utc::now();
        let mut c = campaign();
        c.apply(&created("a", SystemKind::ReactLlm, t)).unwrap();
        c.apply(&message("a", t + Duration::hours(23))).unwrap();
        let late = t + Duration::hours(48);
        assert_eq!(c.get("a").unwrap().status(late, Duration::hours(24)), SessionStatus::Abandoned);
        assert!(matches!(c.apply(&message("a", late)), Err(StoreError::Abandoned(_))));
        assert_eq!(c.summary().systems[0].dialogues, 0);
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let t = Utc::now();
        let events = vec![created("a", SystemKind::ReactLlm, t), message("a", t), rated("a", true, 5, t)];
        let (log, existing) = EventLog::open(&path).unwrap();
        assert!(existing.is_empty());
        for e in &events {
            log.append(e).unwrap();
        }
        drop(log);
        let (_, reread) = EventLog::open(&path).unwrap();
        assert_eq!(reread, events);
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(EventLog::read(&path), Err(StoreError::Corrupt { line: 1, .. })));
    }
}
