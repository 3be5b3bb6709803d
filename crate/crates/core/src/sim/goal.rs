use std::fmt;

use indexmap::IndexMap;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::db::{DomainDatabase, SlotPolicy, Value};

/// What the user wants from one domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    #[serde(default)]
    pub info: IndexMap<String, String>,
    /// Slots to ask for. Serialized as `{slot: "?"}`.
    #[serde(default, with = "reqt_map")]
    pub reqt: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub book: Option<IndexMap<String, String>>,
}

mod reqt_map {
    use indexmap::IndexMap;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(slots: &[String], s: S) -> Result<S::Ok, S::Error> {
        slots.iter().map(|k| (k.as_str(), "?")).collect::<IndexMap<_, _>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        Ok(IndexMap::<String, String>::deserialize(d)?.into_keys().collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Goal {
    pub domains: IndexMap<String, GoalSpec>,
}

impl Goal {
    pub fn domain_names(&self) -> Vec<&str> {
        self.domains.keys().map(String::as_str).collect()
    }

    /// Checks the schema invariants: info ⊆ informable, reqt ⊆ requestable,
    /// at least one domain.
    pub fn validate(&self, db: &DomainDatabase) -> Result<(), String> {
        if self.domains.is_empty() {
            return Err("goal has no domains".into());
        }
        for (domain, spec) in &self.domains {
            let schema = db.schema(domain).ok_or_else(|| format!("unknown domain '{domain}'"))?;
            if let Some(s) = spec.info.keys().find(|s| !schema.is_informable(s)) {
                return Err(format!("{domain}: '{s}' is not informable"));
            }
            if let Some(s) = spec.reqt.iter().find(|s| !schema.is_requestable(s)) {
                return Err(format!("{domain}: '{s}' is not requestable"));
            }
            if spec.book.is_some() && !schema.bookable {
                return Err(format!("{domain}: domain does not take bookings"));
            }
        }
        Ok(())
    }

    /// Plain-language rendering shown to human raters.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        for (domain, spec) in &self.domains {
            let mut s = format!("You are looking for a {}", super::nlg::domain_noun(domain));
            if !spec.info.is_empty() {
                let constraints: Vec<String> = spec.info.iter().map(|(k, v)| format!("{k} {v}")).collect();
                s.push_str(&format!(" with {}", constraints.join(", ")));
            }
            s.push('.');
            if !spec.reqt.is_empty() {
                s.push_str(&format!(" Ask for its {}.", spec.reqt.iter().map(|r| super::nlg::slot_phrase(r)).collect::<Vec<_>>().join(", ")));
            }
            if let Some(book) = &spec.book {
                let b: Vec<String> = book.iter().map(|(k, v)| format!("{k} {v}")).collect();
                s.push_str(&format!(" Make a booking for {}.", b.join(", ")));
            }
            parts.push(s);
        }
        parts.join(" ")
    }
}

/// Renders in the shape `{police: {info: {}, reqt: {postcode: ?, phone: ?}}}`.
impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let map = |m: &IndexMap<String, String>| {
            format!("{{{}}}", m.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join(", "))
        };
        let domains: Vec<String> = self
            .domains
            .iter()
            .map(|(d, spec)| {
                let reqt = spec.reqt.iter().map(|r| format!("{r}: ?")).collect::<Vec<_>>().join(", ");
                let mut s = format!("{d}: {{info: {}, reqt: {{{reqt}}}", map(&spec.info));
                if let Some(book) = &spec.book {
                    s.push_str(&format!(", book: {}", map(book)));
                }
                s.push('}');
                s
            })
            .collect();
        write!(f, "{{{}}}", domains.join(", "))
    }
}

const WEEKDAYS: [&str; 7] = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const BOOK_TIMES: [&str; 8] = ["11:00", "12:30", "13:15", "17:45", "18:00", "18:30", "19:15", "20:00"];

fn book_constraints(domain: &str, rng: &mut ChaCha8Rng) -> IndexMap<String, String> {
    let mut book = IndexMap::new();
    book.insert("people".to_string(), rng.gen_range(1..=8).to_string());
    match domain {
        "hotel" => {
            book.insert("day".into(), WEEKDAYS.choose(rng).unwrap().to_string());
            book.insert("stay".into(), rng.gen_range(1..=5).to_string());
        }
        "restaurant" => {
            book.insert("day".into(), WEEKDAYS.choose(rng).unwrap().to_string());
            book.insert("time".into(), BOOK_TIMES.choose(rng).unwrap().to_string());
        }
        _ => {}
    }
    book
}

fn goal_value(v: &Value) -> Option<String> {
    match v {
        Value::Text(_) | Value::Integer(_) | Value::Time(_) => Some(v.to_string()),
        Value::Coordinate(..) | Value::PriceMap(_) => None,
    }
}

/// Seeded goal: 1–3 domains (weights 0.6/0.3/0.1), info values copied from
/// one real entity so the goal is always satisfiable.
///
/// # Panics
/// If no domain of `db` has entities.
pub fn generate_goal(db: &DomainDatabase, seed: u64) -> Goal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<&str> =
        db.domains().iter().map(|d| d.name.as_str()).filter(|d| !db.entities(d).is_empty()).collect();
    assert!(!candidates.is_empty(), "cannot generate a goal from a database without entities");

    let roll: f64 = rng.gen();
    let wanted = if roll < 0.6 { 1 } else if roll < 0.9 { 2 } else { 3 };
    let mut chosen: Vec<usize> = (0..candidates.len()).choose_multiple(&mut rng, wanted.min(candidates.len()));
    chosen.shuffle(&mut rng);

    let mut goal = Goal::default();
    for idx in chosen {
        let domain = candidates[idx];
        let schema = db.schema(domain).expect("candidate domain exists");
        let entity = db.entities(domain).choose(&mut rng).expect("candidate has entities");

        let usable: Vec<(&str, String)> = schema
            .informable
            .iter()
            .filter_map(|s| entity.get(s).and_then(goal_value).map(|v| (s.as_str(), v)))
            .collect();
        let mut info = IndexMap::new();
        if !usable.is_empty() {
            let k = rng.gen_range(1..=usable.len().min(3));
            let mut picks: Vec<usize> = (0..usable.len()).choose_multiple(&mut rng, k);
            picks.sort_unstable();
            for i in picks {
                info.insert(usable[i].0.to_string(), usable[i].1.clone());
            }
        }

        let askable: Vec<&String> = schema.requestable.iter().filter(|s| !info.contains_key(*s)).collect();
        let mut reqt = Vec::new();
        if !askable.is_empty() {
            let k = rng.gen_range(1..=askable.len().min(3));
            let mut picks: Vec<&String> = askable.into_iter().choose_multiple(&mut rng, k);
            picks.shuffle(&mut rng);
            reqt = picks.into_iter().cloned().collect();
        }

        let book = (schema.bookable && rng.gen_bool(0.5)).then(|| book_constraints(domain, &mut rng));
        debug_assert!(db.query_constraints(domain, &info, 1, SlotPolicy::Strict).map(|r| !r.entities.is_empty()).unwrap_or(false));
        goal.domains.insert(domain.to_string(), GoalSpec { info, reqt, book });
    }
    goal
}
