//! Deterministic rule policies: a ReAct-speaking backend for offline batch
//! runs and a plain responder used as the human-evaluation baseline.
//!
//! Both read the dialogue with keyword matching tuned to the simulator's
//! phrasings; neither is meant to be clever.

use std::sync::{Arc, LazyLock};

use indexmap::IndexMap;
use regex::Regex;

use crate::db::{is_dontcare, BookingLedger, DomainDatabase, Entity, SlotPolicy, Value};
use crate::doc::Doc;
use crate::eval::BOOKING_INTENT;
use crate::llm::{approx_token_count, truncate_at_stop, BackendError, Completion, CompletionBackend, CompletionRequest, Usage};
use crate::sim::nlg::{domain_noun, inform_phrase, slot_phrase};
use crate::sim::nlu::find_word;
use crate::sim::detect_domains;

static BOOKING: LazyLock<Regex> = LazyLock::new(|| Regex::new(BOOKING_INTENT).unwrap());
static GOODBYE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(goodbye|bye)\b|that is all|that's all|that's everything").unwrap());
static LEAVE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:leav\w*|depart\w*)\s+(?:after|at)\s+(\d{1,2}:\d{2})").unwrap());
static ARRIVE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\barriv\w*\s+(?:by|before)\s+(\d{1,2}:\d{2})").unwrap());
static STARS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d)[ -]stars?\b").unwrap());
static DAY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(monday|tuesday|wednesday|thursday|friday|saturday|sunday)\b").unwrap());

pub const GREETING_REPLY: &str =
    "Hello! I can help you find a restaurant, hotel, attraction, train, hospital, taxi or the police. What are you looking for?";
pub const GOODBYE_REPLY: &str = "Goodbye! Have a nice day!";

/// What the user has said so far, as far as keyword rules can tell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reading {
    /// Domain under discussion after the latest utterance.
    pub domain: Option<String>,
    /// Accumulated informable constraints per domain.
    pub constraints: IndexMap<String, IndexMap<String, String>>,
    /// Slots asked for in the latest utterance.
    pub requests: Vec<String>,
    pub booking: bool,
    pub goodbye: bool,
}

impl Reading {
    pub fn current(&self) -> IndexMap<String, String> {
        self.domain.as_ref().and_then(|d| self.constraints.get(d)).cloned().unwrap_or_default()
    }
}

fn text_values(db: &DomainDatabase, domain: &str, slot: &str) -> Vec<String> {
    let mut values: Vec<String> = db
        .entities(domain)
        .iter()
        .filter_map(|e| match e.get(slot)? {
            v @ (Value::Text(_) | Value::Integer(_)) => Some(v.to_string().to_ascii_lowercase()),
            _ => None,
        })
        .collect();
    values.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    values.dedup();
    values
}

fn flag(lower: &str, words: &[&str]) -> Option<&'static str> {
    let said = |w: &str| find_word(lower, w).is_some();
    if words.iter().any(|w| said(&format!("no {w}")) || said(&format!("without {w}"))) {
        Some("no")
    } else if words.iter().any(|w| said(w)) {
        Some("yes")
    } else {
        None
    }
}

/// Informable constraints stated in one utterance for `domain`.
pub fn extract_constraints(db: &DomainDatabase, domain: &str, text: &str) -> IndexMap<String, String> {
    let mut out = IndexMap::new();
    let Some(schema) = db.schema(domain) else { return out };
    let lower = text.to_ascii_lowercase();
    for slot in &schema.informable {
        let found = match slot.as_str() {
            "leaveAt" => LEAVE.captures(&lower).map(|c| c[1].to_string()),
            "arriveBy" => ARRIVE.captures(&lower).map(|c| c[1].to_string()),
            "day" => DAY.captures(&lower).map(|c| c[1].to_string()),
            "stars" => STARS.captures(&lower).map(|c| c[1].to_string()),
            "internet" => flag(&lower, &["internet", "wifi"]).map(String::from),
            "parking" => flag(&lower, &["parking"]).map(String::from),
            slot => {
                let bare = matches!(slot, "name" | "food" | "pricerange" | "department" | "trainID")
                    || (slot == "type" && domain == "attraction");
                text_values(db, domain, slot).into_iter().find(|v| {
                    let phrased = match slot {
                        "departure" => format!("from {v}"),
                        "destination" => format!("to {v}"),
                        _ => inform_phrase(slot, v).to_ascii_lowercase(),
                    };
                    find_word(&lower, &phrased).is_some()
                        || (slot == "area" && find_word(&lower, &format!("{v} area")).is_some())
                        || (bare && find_word(&lower, v).is_some())
                })
            }
        };
        if let Some(v) = found.filter(|v| !is_dontcare(v)) {
            out.insert(slot.clone(), v);
        }
    }
    out
}

/// Requestable slots the utterance asks for, longest phrase first so
/// "type of food" is not also read as "type".
pub fn extract_requests(db: &DomainDatabase, domain: &str, text: &str) -> Vec<String> {
    let (slots, _) = split_requests(db, domain, text);
    slots
}

/// Requested slots plus the lowercased text with the request phrases
/// blanked out, so "the internet" is not read as a wifi constraint.
fn split_requests(db: &DomainDatabase, domain: &str, text: &str) -> (Vec<String>, String) {
    let mut lower = text.to_ascii_lowercase();
    let Some(schema) = db.schema(domain) else { return (Vec::new(), lower) };
    let mut slots: Vec<&String> = schema.requestable.iter().collect();
    slots.sort_by_key(|s| std::cmp::Reverse(slot_phrase(s).len()));
    let mut found = Vec::new();
    for slot in slots {
        let needle = format!("the {}", slot_phrase(slot).to_ascii_lowercase());
        if let Some(at) = find_word(&lower, &needle) {
            lower.replace_range(at..at + needle.len(), &" ".repeat(needle.len()));
            found.push((at, slot.clone()));
        }
    }
    found.sort();
    (found.into_iter().map(|(_, s)| s).collect(), lower)
}

/// Reads all user utterances in order; the last one decides intent.
pub fn read_dialogue(db: &DomainDatabase, user_texts: &[&str]) -> Reading {
    let mut reading = Reading::default();
    for text in user_texts {
        let known: Vec<&str> = detect_domains(text).into_iter().filter(|d| db.schema(d).is_some()).collect();
        if let Some(first) = known.first() {
            reading.domain = Some(first.to_string());
        }
        if let Some(domain) = reading.domain.clone() {
            let (_, rest) = split_requests(db, &domain, text);
            let found = extract_constraints(db, &domain, &rest);
            reading.constraints.entry(domain).or_default().extend(found);
        }
    }
    if let Some(last) = user_texts.last() {
        reading.requests = reading.domain.as_ref().map(|d| extract_requests(db, d, last)).unwrap_or_default();
        let bookable = reading.domain.as_ref().and_then(|d| db.schema(d)).is_some_and(|s| s.bookable);
        reading.booking = bookable && BOOKING.is_match(last);
        reading.goodbye = GOODBYE.is_match(last) && reading.requests.is_empty() && !reading.booking;
    }
    reading
}

/// One offered entity as slot → text.
pub type Record = IndexMap<String, String>;

fn entity_record(entity: &Entity, slots: &[String]) -> Record {
    slots.iter().filter_map(|s| entity.get(s).map(|v| (s.clone(), v.to_string()))).collect()
}

/// Entities of `domain` listed in a `db_query` observation, in listed
/// order. Matching on the rendered form avoids re-parsing values that
/// contain commas.
pub fn observed_entities<'a>(db: &'a DomainDatabase, domain: &str, observation: &str) -> Vec<&'a Entity> {
    let mut found: Vec<(usize, &Entity)> =
        db.entities(domain).iter().filter_map(|e| observation.find(&e.to_string()).map(|at| (at, e))).collect();
    found.sort_by_key(|(at, _)| *at);
    found.into_iter().map(|(_, e)| e).collect()
}

fn record_name(record: &Record) -> Option<&str> {
    ["name", "trainID", "department"].iter().find_map(|k| record.get(*k)).map(String::as_str)
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn no_result_reply(domain: &str) -> String {
    format!("I'm sorry, I could not find any {} matching your request.", domain_noun(domain))
}

/// The reply once the top entity (and maybe a booking code) is known.
pub fn compose_reply(domain: &str, top: &Record, requests: &[String], code: Option<&str>) -> String {
    let noun = domain_noun(domain);
    let subject = record_name(top).map(str::to_string).unwrap_or_else(|| format!("a {noun}"));
    let mut sentences = Vec::new();
    match code {
        Some(code) => sentences.push(format!("I have booked {subject} for you. Your booking reference is {code}.")),
        None if requests.is_empty() => sentences.push(match record_name(top) {
            Some(name) => format!("{} is a {noun} that matches your request.", capitalize(name)),
            None => format!("I found a {noun} that matches your request."),
        }),
        None => {}
    }
    for slot in requests {
        let phrase = slot_phrase(slot);
        match top.get(slot) {
            Some(v) if code.is_none() && sentences.is_empty() && record_name(top).is_some() => {
                sentences.push(format!("The {phrase} of {subject} is {v}."));
            }
            Some(v) => sentences.push(format!("The {phrase} is {v}.")),
            None => sentences.push(format!("I don't have the {phrase} of {subject}.")),
        }
    }
    if code.is_none() && requests.is_empty() {
        sentences.push("Would you like to know anything else?".into());
    }
    sentences.join(" ")
}

/// Chat history and scratchpad as seen in a rendered prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PromptView {
    user_texts: Vec<String>,
    first_turn: bool,
    /// (tool, input text, observation) per completed step this turn.
    steps: Vec<(String, String, String)>,
}

fn read_prompt(prompt: &str) -> Option<PromptView> {
    let (_, tail) = prompt.rsplit_once("Begin!\n")?;
    let mut view = PromptView { first_turn: true, ..Default::default() };
    let mut lines = tail.lines().peekable();
    let mut question = None;
    for line in lines.by_ref() {
        if let Some(u) = line.strip_prefix("User: ") {
            view.user_texts.push(u.to_string());
            view.first_turn = false;
        } else if let Some(q) = line.strip_prefix("Question: ") {
            question = Some(q.to_string());
            break;
        }
    }
    view.user_texts.push(question?);
    let mut pending: Option<(String, String)> = None;
    let mut observing: Option<(String, String, String)> = None;
    for line in lines {
        if let Some(tool) = line.strip_prefix("Action: ") {
            if let Some(step) = observing.take() {
                view.steps.push(step);
            }
            pending = Some((tool.trim().to_string(), String::new()));
        } else if let Some(input) = line.strip_prefix("Input: ") {
            if let Some(p) = pending.as_mut() {
                p.1 = input.to_string();
            }
        } else if let Some(obs) = line.strip_prefix("Observation: ") {
            let (tool, input) = pending.take().unwrap_or_default();
            observing = Some((tool, input, obs.to_string()));
        } else if line.starts_with("Thought:") {
            if let Some(step) = observing.take() {
                view.steps.push(step);
            }
        } else if let Some(o) = observing.as_mut() {
            o.2.push('\n');
            o.2.push_str(line);
        }
    }
    view.steps.extend(observing);
    Some(view)
}

fn map_doc(pairs: &[(&str, Doc)]) -> Doc {
    Doc::Map(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
}

fn action(thought: &str, tool: &str, input: Doc) -> String {
    format!("Thought: {thought}\nAction: {tool}\nInput: {input}")
}

fn final_answer(thought: &str, answer: &str) -> String {
    format!("Thought: {thought}\nFinal Answer: {answer}")
}

/// A completion backend that plays the ReAct format with fixed rules:
/// discover the domain and slots on the first turn, query the database
/// every turn, book on explicit booking intent and answer from the top
/// result.
#[derive(Debug, Clone)]
pub struct RuleBackend {
    db: Arc<DomainDatabase>,
}

impl RuleBackend {
    pub fn new(db: Arc<DomainDatabase>) -> Self {
        RuleBackend { db }
    }

    fn record(&self, domain: &str, entity: &Entity) -> Record {
        let slots = self.db.schema(domain).map(|s| s.slots.clone()).unwrap_or_default();
        entity_record(entity, &slots)
    }

    fn next_step(&self, prompt: &str) -> String {
        let Some(view) = read_prompt(prompt) else {
            return final_answer("I cannot read the conversation.", GREETING_REPLY);
        };
        let texts: Vec<&str> = view.user_texts.iter().map(String::as_str).collect();
        let reading = read_dialogue(&self.db, &texts);
        let done = |tool: &str| view.steps.iter().rev().find(|(t, ..)| t == tool);

        if reading.goodbye {
            return final_answer("The user is ending the conversation.", GOODBYE_REPLY);
        }
        let Some(domain) = reading.domain.clone() else {
            return final_answer("I do not know yet what the user is looking for.", GREETING_REPLY);
        };
        let domain_doc = Doc::Scalar(domain.clone());

        if view.first_turn && done("list_domains").is_none() {
            return action("The user needs help. I need to identify the domain.", "list_domains", Doc::empty_map());
        }
        if view.first_turn && done("list_slots").is_none() {
            return action(
                &format!("The domain {domain} matches the user's request. Now I need the slot names."),
                "list_slots",
                map_doc(&[("domain", domain_doc)]),
            );
        }
        let Some((_, _, observation)) = done("db_query") else {
            let slots: IndexMap<String, Doc> =
                reading.current().into_iter().map(|(k, v)| (k, Doc::Scalar(v))).collect();
            let described = if slots.is_empty() {
                "no constraints yet".to_string()
            } else {
                slots.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join(", ")
            };
            let state = map_doc(&[(domain.as_str(), Doc::Map(slots))]);
            return action(
                &format!("The user's constraints are {described}. Now I need to query the database."),
                "db_query",
                map_doc(&[("domain", domain_doc), ("state", state)]),
            );
        };
        if observation.starts_with("Error") {
            return final_answer("The query failed.", &no_result_reply(&domain));
        }
        let Some(top) = observed_entities(&self.db, &domain, observation).first().map(|e| self.record(&domain, e)) else {
            return final_answer("The database returned no results.", &no_result_reply(&domain));
        };
        let code = match done("get_booking_reference") {
            Some((_, _, obs)) => Some(obs.trim().to_string()),
            None if reading.booking => {
                let utterance = texts.last().copied().unwrap_or_default().replace('"', "'");
                return action(
                    "The user wants to make a booking. I need to generate a booking reference.",
                    "get_booking_reference",
                    map_doc(&[("domain", domain_doc), ("utterance", Doc::Scalar(utterance))]),
                );
            }
            None => None,
        };
        let code = code.filter(|c| !c.starts_with("Error"));
        if reading.booking && code.is_none() {
            return final_answer("The booking failed.", &format!("I'm sorry, I was unable to book the {}.", domain_noun(&domain)));
        }
        final_answer("I now know the final answer.", &compose_reply(&domain, &top, &reading.requests, code.as_deref()))
    }
}

impl CompletionBackend for RuleBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        let raw = self.next_step(&request.prompt);
        let text = truncate_at_stop(&raw, &request.stop).to_string();
        let usage = Usage::new(approx_token_count(&request.prompt), approx_token_count(&text));
        Ok(Completion { text, usage })
    }
}

/// Rule-based system answering directly, without a language model.
#[derive(Debug, Clone)]
pub struct BaselineResponder {
    db: Arc<DomainDatabase>,
    ledger: BookingLedger,
    user_texts: Vec<String>,
}

impl BaselineResponder {
    pub fn new(db: Arc<DomainDatabase>) -> Self {
        BaselineResponder { db, ledger: BookingLedger::new(), user_texts: Vec::new() }
    }

    pub fn turns(&self) -> usize {
        self.user_texts.len()
    }

    pub fn respond(&mut self, user_text: &str) -> String {
        self.ledger.set_turn(self.user_texts.len());
        self.user_texts.push(user_text.to_string());
        let texts: Vec<&str> = self.user_texts.iter().map(String::as_str).collect();
        let reading = read_dialogue(&self.db, &texts);
        if reading.goodbye {
            return GOODBYE_REPLY.into();
        }
        let Some(domain) = reading.domain.clone() else { return GREETING_REPLY.into() };
        let Some(schema) = self.db.schema(&domain) else { return GREETING_REPLY.into() };
        let top = match self.db.query_constraints(&domain, &reading.current(), 1, SlotPolicy::Lenient) {
            Ok(r) => r.entities.first().map(|e| entity_record(e, &schema.slots)),
            Err(_) => None,
        };
        let Some(top) = top else { return no_result_reply(&domain) };
        let code = if reading.booking {
            match self.ledger.get_booking_reference(&self.db, &domain, Some(user_text)) {
                Ok(code) => Some(code),
                Err(_) => return format!("I'm sorry, I was unable to book the {}.", domain_noun(&domain)),
            }
        } else {
            None
        };
        compose_reply(&domain, &top, &reading.requests, code.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db() -> Arc<DomainDatabase> {
        Arc::new(DomainDatabase::bundled())
    }

    #[test]
    fn reads_simulator_phrasings() {
        let db = db();
        let c = extract_constraints(&db, "hotel", "I need a hotel in the north and with a 4 star rating and with free wifi.");
        assert_eq!(c.get("area").map(String::as_str), Some("north"));
        assert_eq!(c.get("stars").map(String::as_str), Some("4"));
        assert_eq!(c.get("internet").map(String::as_str), Some("yes"));
        assert!(!c.contains_key("type"), "{c:?}");

        let t = extract_constraints(&db, "train", "I need a train departing from cambridge and going to london kings cross and leaving after 14:15.");
        assert_eq!(t.get("departure").map(String::as_str), Some("cambridge"));
        assert_eq!(t.get("destination").map(String::as_str), Some("london kings cross"));
        assert_eq!(t.get("leaveAt").map(String::as_str), Some("14:15"));
    }

    #[test]
    fn requests_prefer_longest_phrase() {
        let db = db();
        assert_eq!(extract_requests(&db, "restaurant", "What is the type of food of the restaurant?"), vec!["food"]);
        assert_eq!(
            extract_requests(&db, "police", "Can you give me the phone number please? Could you tell me the postcode of the police station?"),
            vec!["phone", "postcode"]
        );
    }

    #[test]
    fn domain_carries_over() {
        let db = db();
        let r = read_dialogue(&db, &["I am looking for a hotel in the north.", "Can you give me the postcode please?"]);
        assert_eq!(r.domain.as_deref(), Some("hotel"));
        assert_eq!(r.requests, vec!["postcode"]);
        assert!(!r.booking && !r.goodbye);
        assert_eq!(r.current().get("area").map(String::as_str), Some("north"));
    }

    #[test]
    fn finds_entities_in_observations() {
        let db = db();
        for domain in ["police", "hospital", "restaurant"] {
            let mut entities: Vec<&Entity> = db.entities(domain).iter().take(2).collect();
            entities.reverse();
            let seen = observed_entities(&db, domain, &crate::db::render_entities(&entities));
            assert_eq!(seen, entities, "{domain}");
        }
        assert!(observed_entities(&db, "police", "[]").is_empty());
    }

    #[test]
    fn request_words_are_not_constraints() {
        let db = db();
        let r = read_dialogue(&db, &["I need a hotel with no parking.", "Could you tell me the internet of the hotel?"]);
        assert_eq!(r.requests, vec!["internet"]);
        assert!(!r.current().contains_key("internet"), "{:?}", r.current());
    }

    #[test]
    fn baseline_books_on_request() {
        let mut bot = BaselineResponder::new(db());
        let first = bot.respond("I need a restaurant serving italian food in the centre.");
        assert!(first.contains("matches your request"), "{first}");
        let booked = bot.respond("Can you book a table for 2 people on friday at 18:00?");
        assert!(booked.contains("booking reference is 00000001"), "{booked}");
        assert_eq!(bot.respond("Thanks, goodbye."), GOODBYE_REPLY);
    }
}
