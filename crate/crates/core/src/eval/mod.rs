//! Dialogue metrics and trace-error analysis.

mod issues;

use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::DomainDatabase;
use crate::dialogue::{DialogueLog, Termination};
use crate::sim::{goal_status, Goal};

pub use issues::{analyze_trace, issue_histogram, IssueKind, TraceIssue, BOOKING_INTENT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvaluationError {
    #[error("dialogue log has no turns")]
    EmptyLog,
    #[error("turn {0} has no system-act annotations")]
    Unannotated(usize),
    #[error("no dialogue scores to aggregate")]
    NoScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialogueScore {
    pub turns: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub book_rate: f64,
    pub complete: bool,
    pub success: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    num as f64 / den as f64
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Scores one annotated dialogue.
///
/// Precision is correct/answered over requested slots (1 when nothing was
/// requested, 0 when requests got no answer); recall is correct/requested
/// (1 without requests); the book rate is satisfied/requested bookings (1
/// without bookings). A dialogue is complete when the user ended it,
/// nothing was abandoned and every request got an answer; it is successful
/// when additionally recall and book rate are 1.
pub fn score_dialogue(goal: &Goal, log: &DialogueLog, db: &DomainDatabase) -> Result<DialogueScore, EvaluationError> {
    if log.turns.is_empty() {
        return Err(EvaluationError::EmptyLog);
    }
    if let Some(i) = log.turns.iter().position(|t| t.system_acts.is_none()) {
        return Err(EvaluationError::Unannotated(i));
    }
    let report = goal_status(goal, log, db);
    let (total, answered, correct) = (report.reqt_total(), report.reqt_answered(), report.reqt_correct());
    let precision = match (answered, total) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => ratio(correct, answered),
    };
    let recall = if total == 0 { 1.0 } else { ratio(correct, total) };
    let book_rate = if report.book_total() == 0 { 1.0 } else { ratio(report.book_satisfied(), report.book_total()) };
    let complete = log.termination == Termination::UserDone && log.abandoned.is_empty() && answered == total;
    let success = complete && correct == total && report.book_satisfied() == report.book_total();
    Ok(DialogueScore { turns: log.turns.len(), precision, recall, f1: f1(precision, recall), book_rate, complete, success })
}

/// A percentage truncated (not rounded) to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Percent(#[serde(with = "rust_decimal::serde::str")] pub Decimal);

impl Percent {
    /// Exact: floor(num / den · 10000) / 100.
    pub fn from_ratio(num: u64, den: u64) -> Percent {
        if den == 0 {
            return Percent(Decimal::ZERO);
        }
        let hundredths = (u128::from(num) * 10_000) / u128::from(den);
        Percent(Decimal::from_i128_with_scale(hundredths as i128, 2))
    }

    /// For fractions that are already means of fractions.
    pub fn from_fraction(x: f64) -> Percent {
        // The nudge keeps values like 0.6 (stored as 0.59999…) at 60.00.
        let hundredths = (x * 10_000.0 + 1e-7).floor().max(0.0);
        Percent(Decimal::from_i128_with_scale(hundredths as i128, 2))
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub dialogues: usize,
    pub avg_turns: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub book_rate: f64,
    pub successes: usize,
    pub completes: usize,
    #[serde(with = "rust_decimal::serde::str")]
    pub total_cost: Decimal,
}

/// Truncated percentages as printed in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsDisplay {
    pub avg_turns: String,
    pub precision: Percent,
    pub recall: Percent,
    pub f1: Percent,
    pub book_rate: Percent,
    pub success_rate: Percent,
    pub complete_rate: Percent,
}

impl CorpusMetrics {
    pub fn success_rate(&self) -> Percent {
        Percent::from_ratio(self.successes as u64, self.dialogues as u64)
    }

    pub fn complete_rate(&self) -> Percent {
        Percent::from_ratio(self.completes as u64, self.dialogues as u64)
    }

    pub fn display(&self) -> MetricsDisplay {
        MetricsDisplay {
            avg_turns: format!("{:.2}", (self.avg_turns * 100.0 + 1e-7).floor() / 100.0),
            precision: Percent::from_fraction(self.precision),
            recall: Percent::from_fraction(self.recall),
            f1: Percent::from_fraction(self.f1),
            book_rate: Percent::from_fraction(self.book_rate),
            success_rate: self.success_rate(),
            complete_rate: self.complete_rate(),
        }
    }

    /// Table in the column order Avg Turns | Inform (P/R/F1) | Book |
    /// Success | Complete.
    pub fn render_table(&self) -> String {
        let d = self.display();
        let header = ["Dialogues", "Avg Turns", "Inform Rate (P/R/F1)", "Book Rate", "Success Rate", "Complete Rate", "Total Cost"];
        let row = [
            self.dialogues.to_string(),
            d.avg_turns,
            format!("{} / {} / {}", d.precision, d.recall, d.f1),
            d.book_rate.to_string(),
            d.success_rate.to_string(),
            d.complete_rate.to_string(),
            format!("${:.2}", self.total_cost),
        ];
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let line = |cells: Vec<&str>| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join(" | ")
        };
        let rule = widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-");
        format!(
            "{}\n{}\n{}\n",
            line(header.to_vec()),
            rule,
            line(row.iter().map(String::as_str).collect())
        )
    }
}

/// Means over dialogues. Success and complete rates keep their counts so
/// displayed percentages are exact.
pub fn aggregate(scores: &[DialogueScore], total_cost: Decimal) -> Result<CorpusMetrics, EvaluationError> {
    if scores.is_empty() {
        return Err(EvaluationError::NoScores);
    }
    let n = scores.len() as f64;
    let mean = |f: fn(&DialogueScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    Ok(CorpusMetrics {
        dialogues: scores.len(),
        avg_turns: mean(|s| s.turns as f64),
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        book_rate: mean(|s| s.book_rate),
        successes: scores.iter().filter(|s| s.success).count(),
        completes: scores.iter().filter(|s| s.complete).count(),
        total_cost,
    })
}
