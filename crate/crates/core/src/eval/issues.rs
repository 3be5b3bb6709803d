//! Heuristic detectors for reasoning defects in agent traces.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::db::DomainDatabase;
use crate::dialogue::DialogueLog;
use crate::engine::{query_args, AgentStep, CallStatus};
use crate::sim::nlu::find_word;

/// Booking-intent lexicon. A heuristic: an enquiry phrased as "is there a
/// table free" counts as intent too.
pub const BOOKING_INTENT: &str = r"(?i)\b(book\w*|reserv\w*|tickets?|table|room for)\b";

static BOOKING_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(BOOKING_INTENT).unwrap());

const ROLE_MARKERS: [&str; 3] = ["system:", "assistant:", "ai:"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IssueKind {
    InvalidSlot,
    InvalidDomain,
    FormatDeviation,
    PrematureBooking,
    RoleSwitch,
    UnverifiedClaim,
}

impl IssueKind {
    pub const ALL: [IssueKind; 6] = [
        IssueKind::InvalidSlot,
        IssueKind::InvalidDomain,
        IssueKind::FormatDeviation,
        IssueKind::PrematureBooking,
        IssueKind::RoleSwitch,
        IssueKind::UnverifiedClaim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IssueKind::InvalidSlot => "InvalidSlot",
            IssueKind::InvalidDomain => "InvalidDomain",
            IssueKind::FormatDeviation => "FormatDeviation",
            IssueKind::PrematureBooking => "PrematureBooking",
            IssueKind::RoleSwitch => "RoleSwitch",
            IssueKind::UnverifiedClaim => "UnverifiedClaim",
        }
    }
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for IssueKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        IssueKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(&wanted))
            .ok_or_else(|| format!("unknown issue kind '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceIssue {
    pub kind: IssueKind,
    pub turn: usize,
    /// The offending span, quoted from the trace or utterance.
    pub evidence: String,
}

fn clip(text: &str, max: usize) -> String {
    let line = text.lines().next().unwrap_or("").trim();
    match line.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &line[..i]),
        None => line.to_string(),
    }
}

/// Runs every detector over a dialogue, in turn order.
pub fn analyze_trace(log: &DialogueLog, db: &DomainDatabase) -> Vec<TraceIssue> {
    let mut issues = Vec::new();
    let mut push = |kind, turn, evidence: String| issues.push(TraceIssue { kind, turn, evidence });

    // Everything the database actually returned during the dialogue.
    let seen: String = log
        .turns
        .iter()
        .filter_map(|t| t.trace.as_ref())
        .flat_map(|tr| &tr.tool_calls)
        .filter(|c| c.tool == "db_query" && c.status == CallStatus::Ok)
        .map(|c| c.observation.to_ascii_lowercase() + "\n")
        .collect();
    let names: Vec<String> = db
        .domains()
        .iter()
        .flat_map(|d| db.entities(&d.name))
        .filter_map(|e| e.display_name())
        .filter(|n| n.len() >= 4)
        .map(str::to_ascii_lowercase)
        .collect();

    for (turn, logged) in log.turns.iter().enumerate() {
        let user = logged.user.trim_start();
        if ROLE_MARKERS.iter().any(|m| user.get(..m.len()).is_some_and(|p| p.eq_ignore_ascii_case(m))) {
            push(IssueKind::RoleSwitch, turn, clip(user, 80));
        }

        let Some(trace) = &logged.trace else { continue };

        if trace.parse_retries > 0 {
            let raw = trace.parse_failures.first().map(String::as_str).unwrap_or("");
            push(IssueKind::FormatDeviation, turn, clip(raw, 80));
        }

        for step in &trace.steps {
            let AgentStep::Action { tool, input } = step else { continue };
            if tool != "db_query" {
                continue;
            }
            let Ok(args) = query_args(input) else { continue };
            let mut domains: Vec<&str> = vec![args.domain.as_str()];
            domains.extend(args.state.constraints.keys().map(String::as_str).filter(|d| !d.eq_ignore_ascii_case(&args.domain)));
            for domain in domains {
                let Some(schema) = db.schema(domain) else {
                    push(IssueKind::InvalidDomain, turn, format!("domain: {domain}"));
                    continue;
                };
                let slots = args.state.constraints.iter().filter(|(d, _)| d.eq_ignore_ascii_case(domain)).flat_map(|(_, s)| s);
                for (slot, value) in slots {
                    if schema.resolve_slot(slot).is_none() {
                        push(IssueKind::InvalidSlot, turn, format!("{slot}: {value}"));
                    }
                }
            }
        }

        let booked = trace.tool_calls.iter().any(|c| c.tool == "get_booking_reference");
        if booked && !BOOKING_RE.is_match(&logged.user) {
            push(IssueKind::PrematureBooking, turn, clip(&logged.user, 80));
        }

        for step in &trace.steps {
            let AgentStep::FinalAnswer { text } = step else { continue };
            let lower = text.to_ascii_lowercase();
            for name in &names {
                if find_word(&lower, name).is_some() && find_word(&seen, name).is_none() {
                    push(IssueKind::UnverifiedClaim, turn, name.clone());
                }
            }
        }
    }
    issues
}

/// Counts per kind; every kind is present, zero when unseen.
pub fn issue_histogram<'a>(issues: impl IntoIterator<Item = &'a TraceIssue>) -> BTreeMap<IssueKind, usize> {
    let mut counts: BTreeMap<IssueKind, usize> = IssueKind::ALL.into_iter().map(|k| (k, 0)).collect();
    for issue in issues {
        *counts.entry(issue.kind).or_default() += 1;
    }
    counts
}
