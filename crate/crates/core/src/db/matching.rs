//! Constraint semantics.
//!
//! Both sides are normalized (trim, lowercase). Text compares by exact
//! normalized equality, integers numerically, "dontcare" matches anything.
//! `leaveAt` is satisfied by entity times at or after the constraint and
//! `arriveBy` by entity times at or before it; other times compare equal.

use indexmap::IndexMap;

use super::value::{is_dontcare, normalize, TimeOfDay, Value};
use super::Entity;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TimeRule {
    AtOrAfter,
    AtOrBefore,
    Exact,
}

pub(crate) fn time_rule(slot: &str) -> TimeRule {
    if slot.eq_ignore_ascii_case("leaveAt") {
        TimeRule::AtOrAfter
    } else if slot.eq_ignore_ascii_case("arriveBy") {
        TimeRule::AtOrBefore
    } else {
        TimeRule::Exact
    }
}

/// Whether a single attribute value satisfies a constraint on `slot`.
pub fn value_satisfies(slot: &str, value: &Value, constraint: &str) -> bool {
    let wanted = normalize(constraint);
    if is_dontcare(&wanted) {
        return true;
    }
    match value {
        Value::Text(s) => normalize(s) == wanted,
        Value::Integer(n) => wanted.parse::<i64>().is_ok_and(|c| c == *n),
        Value::Time(t) => match TimeOfDay::find_in(&wanted) {
            Some(c) => match time_rule(slot) {
                TimeRule::AtOrAfter => *t >= c,
                TimeRule::AtOrBefore => *t <= c,
                TimeRule::Exact => *t == c,
            },
            None => false,
        },
        Value::PriceMap(m) => {
            normalize(&value.to_string()) == wanted || m.values().any(|v| normalize(v) == wanted)
        }
        Value::Coordinate(..) => normalize(&value.to_string()) == wanted,
    }
}

/// True iff the entity satisfies every constraint. Slots the entity lacks
/// only match "dontcare".
pub fn matches(entity: &Entity, constraints: &IndexMap<String, String>) -> bool {
    constraints.iter().all(|(slot, constraint)| match entity.get(slot) {
        Some(value) => value_satisfies(slot, value, constraint),
        None => is_dontcare(&normalize(constraint)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::db::DomainDatabase;

    fn c(pairs: &[(&str, &str)]) -> IndexMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn train<'a>(db: &'a DomainDatabase, id: &str) -> &'a Entity {
        db.entities("train").iter().find(|e| e.display_name() == Some(id)).unwrap()
    }

    #[test]
    fn numeric_text_and_vacuous() {
        let db = DomainDatabase::bundled();
        let hamilton = &db.entities("hotel")[8];
        assert_eq!(hamilton.display_name(), Some("hamilton lodge"));
        assert!(matches(hamilton, &c(&[("stars", "3")])));
        assert!(matches(hamilton, &c(&[("stars", " 3 ")])));
        assert!(!matches(hamilton, &c(&[("stars", "three")])));
        assert!(matches(hamilton, &c(&[("name", "Hamilton  Lodge")])));
        assert!(matches(hamilton, &c(&[])));
        assert!(matches(hamilton, &c(&[("area", "dontcare"), ("pricerange", "don't care")])));
        assert!(matches(hamilton, &c(&[("price", "73")])));
    }

    #[test]
    fn travel_time_conventions() {
        let db = DomainDatabase::bundled();
        let tr6028 = train(&db, "TR6028");
        assert!(matches(tr6028, &c(&[("leaveAt", "14:15")])));
        assert!(matches(tr6028, &c(&[("leaveAt", "15:00")])));
        assert!(!matches(tr6028, &c(&[("leaveAt", "15:01")])));
        assert!(!matches(tr6028, &c(&[("arriveBy", "14:15")])));
        assert!(matches(tr6028, &c(&[("arriveBy", "15:51")])));
        assert!(matches(tr6028, &c(&[("leaveAt", "after 14:15")])));
        assert!(!matches(tr6028, &c(&[("leaveAt", "afternoon")])));
    }

    /// Independent oracle: compare minutes computed straight from the
    /// "HH:MM" strings against the matcher for every fixture train and every
    /// quarter-hour constraint.
    #[test]
    fn time_comparison_oracle() {
        let db = DomainDatabase::bundled();
        let minutes = |s: &str| -> i32 {
            let (h, m) = s.split_once(':').unwrap();
            h.parse::<i32>().unwrap() * 60 + m.parse::<i32>().unwrap()
        };
        for e in db.entities("train") {
            let leave = e.get("leaveAt").unwrap().to_string();
            let arrive = e.get("arriveBy").unwrap().to_string();
            for q in (0..24 * 60).step_by(15) {
                let text = format!("{:02}:{:02}", q / 60, q % 60);
                assert_eq!(matches(e, &c(&[("leaveAt", &text)])), minutes(&leave) >= q);
                assert_eq!(matches(e, &c(&[("arriveBy", &text)])), minutes(&arrive) <= q);
            }
        }
    }
}
