//! Goal fulfillment measured against database truth.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::acts::SystemActKind;
use super::goal::Goal;
use super::nlu::find_word;
use crate::db::{matches, normalize, DomainDatabase, SlotPolicy};
use crate::dialogue::DialogueLog;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAnswer {
    /// Last value informed for the slot.
    pub value: Option<String>,
    /// Some entity consistent with the goal's info carries this value.
    pub correct: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookStatus {
    pub code: Option<String>,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FulfillmentReport {
    pub reqt: IndexMap<String, IndexMap<String, SlotAnswer>>,
    pub book: IndexMap<String, BookStatus>,
    pub violations: Vec<String>,
}

impl FulfillmentReport {
    pub fn reqt_total(&self) -> usize {
        self.reqt.values().map(IndexMap::len).sum()
    }

    pub fn reqt_answered(&self) -> usize {
        self.reqt.values().flat_map(|m| m.values()).filter(|a| a.value.is_some()).count()
    }

    pub fn reqt_correct(&self) -> usize {
        self.reqt.values().flat_map(|m| m.values()).filter(|a| a.correct).count()
    }

    pub fn book_total(&self) -> usize {
        self.book.len()
    }

    pub fn book_satisfied(&self) -> usize {
        self.book.values().filter(|b| b.satisfied).count()
    }
}

/// Which requested slots were answered correctly and which bookings were
/// made under constraints consistent with the goal.
///
/// A booking counts when its code was issued by the booking tool for the
/// goal domain and told to the user, the top entity for that turn's belief
/// state satisfies the goal's info, and every booking value was stated by
/// the user by then.
pub fn goal_status(goal: &Goal, log: &DialogueLog, db: &DomainDatabase) -> FulfillmentReport {
    let mut report = FulfillmentReport::default();
    for (domain, spec) in &goal.domains {
        let consistent: Vec<_> = db.entities(domain).iter().filter(|e| matches(e, &spec.info)).collect();

        let mut answers = IndexMap::new();
        for slot in &spec.reqt {
            let value = log
                .turns
                .iter()
                .rev()
                .flat_map(|t| t.system_acts.iter().flatten().rev())
                .find_map(|a| match &a.kind {
                    SystemActKind::InformValue { domain: d, slot: s, value } if d == domain && s == slot => Some(value.clone()),
                    _ => None,
                });
            let correct = value.as_ref().is_some_and(|v| {
                let wanted = normalize(v);
                consistent.iter().any(|e| e.get(slot).is_some_and(|ev| normalize(&ev.to_string()) == wanted))
            });
            answers.insert(slot.clone(), SlotAnswer { value, correct });
        }
        report.reqt.insert(domain.clone(), answers);

        let Some(book) = &spec.book else { continue };
        let mut status = BookStatus::default();
        for record in log.bookings.iter().filter(|r| &r.domain == domain) {
            let told = log.turns.iter().skip(record.turn).flat_map(|t| t.system_acts.iter().flatten()).any(
                |a| matches!(&a.kind, SystemActKind::BookingRef { code } if *code == record.code),
            );
            if !told {
                report.violations.push(format!("{domain}: booking {} never given to the user", record.code));
                continue;
            }
            status.code.get_or_insert_with(|| record.code.clone());

            let empty = IndexMap::new();
            let constraints = log
                .turns
                .get(record.turn)
                .and_then(|t| t.belief.domain(domain))
                .unwrap_or(&empty);
            let top = db
                .query_constraints(domain, constraints, 1, SlotPolicy::Lenient)
                .ok()
                .and_then(|r| r.entities.first().copied());
            let entity_ok = top.is_some_and(|e| matches(e, &spec.info));
            if !entity_ok {
                report.violations.push(format!("{domain}: booking {} is for an entity outside the goal", record.code));
                continue;
            }

            let mut said = String::new();
            if let Some(u) = &record.utterance {
                said.push_str(&u.to_ascii_lowercase());
            }
            for t in log.turns.iter().take(record.turn + 1) {
                said.push('\n');
                said.push_str(&t.user.to_ascii_lowercase());
            }
            let missing: Vec<&String> = book.iter().filter(|(_, v)| find_word(&said, &normalize(v)).is_none()).map(|(k, _)| k).collect();
            if missing.is_empty() {
                status.code = Some(record.code.clone());
                status.satisfied = true;
                break;
            }
            report.violations.push(format!("{domain}: booking {} lacks {missing:?}", record.code));
        }
        report.book.insert(domain.clone(), status);
    }
    report
}
