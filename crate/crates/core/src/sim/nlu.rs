//! Pattern NLU for system utterances, grounded in the database.

use std::sync::LazyLock;

use indexmap::IndexMap;
use regex::Regex;

use super::acts::{SystemAct, SystemActKind};
use crate::db::{DomainDatabase, Entity, Value};

static BOOKING_REF: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d{8}\b").unwrap());
static NO_RESULT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(no|not|couldn't|could not|can't|cannot|unable|sorry|unfortunately)\b[^.?!]*\b(find|found|match\w*|available|results?)\b",
    )
    .unwrap()
});

/// Byte offset of the first whole-word occurrence of `needle` in `hay`.
/// Both must already be ASCII-lowercased.
pub fn find_word(hay: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let bytes = hay.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric();
    let mut from = 0;
    while let Some(rel) = hay[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        let left_ok = start == 0 || !is_word(bytes[start - 1]) || !is_word(needle.as_bytes()[0]);
        let right_ok = end == hay.len() || !is_word(bytes[end]) || !is_word(needle.as_bytes()[needle.len() - 1]);
        if left_ok && right_ok {
            return Some(start);
        }
        from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

const DOMAIN_KEYWORDS: [(&str, &[&str]); 7] = [
    ("restaurant", &["restaurant", "food", "eat", "dine", "dinner", "lunch", "table"]),
    ("hotel", &["hotel", "guesthouse", "guest house", "place to stay", "accommodation", "room", "nights"]),
    ("attraction", &["attraction", "museum", "church", "park", "college", "gallery", "theatre", "entertainment", "visit"]),
    ("train", &["train", "trains", "tickets", "railway"]),
    ("hospital", &["hospital", "department", "clinic"]),
    ("taxi", &["taxi", "cab", "pick me up"]),
    ("police", &["police", "robbed", "stolen", "crime"]),
];

/// Domains named in `text`, ordered by first mention.
pub fn detect_domains(text: &str) -> Vec<&'static str> {
    let lower = text.to_ascii_lowercase();
    let mut hits: Vec<(usize, &'static str)> = DOMAIN_KEYWORDS
        .iter()
        .filter_map(|(d, kws)| kws.iter().filter_map(|k| find_word(&lower, k)).min().map(|pos| (pos, *d)))
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, d)| d).collect()
}

/// Words that show a value is being given for a slot.
pub fn slot_aliases(slot: &str) -> &'static [&'static str] {
    match slot {
        "address" => &["address", "located", "location", "at"],
        "area" => &["area", "part of town", "in the"],
        "food" => &["food", "cuisine", "serve", "serves"],
        "phone" => &["phone", "number", "call", "contact"],
        "postcode" => &["postcode", "post code", "postal"],
        "pricerange" => &["price", "cheap", "expensive", "moderate"],
        "stars" => &["star", "stars"],
        "type" => &["type", "is a", "kind", "car"],
        "internet" => &["internet", "wifi", "wi-fi"],
        "parking" => &["parking"],
        "entrancefee" => &["entrance", "fee", "admission", "cost", "free"],
        "arriveBy" => &["arrive", "arrives", "arriving", "arrival"],
        "leaveAt" => &["leave", "leaves", "leaving", "depart", "departs", "departing", "departure"],
        "duration" => &["duration", "take", "takes", "minutes", "journey"],
        "price" => &["price", "cost", "costs", "pounds"],
        "trainID" => &["train", "id"],
        "color" => &["colour", "color", "car"],
        _ => &[],
    }
}

/// Question cues asking the user for a slot value.
const REQUEST_CUES: [(&str, &str); 22] = [
    ("price range", "pricerange"),
    ("what area", "area"),
    ("which area", "area"),
    ("part of town", "area"),
    ("type of food", "food"),
    ("cuisine", "food"),
    ("how many people", "people"),
    ("for how many", "people"),
    ("how many nights", "stay"),
    ("how long will you", "stay"),
    ("what day", "day"),
    ("which day", "day"),
    ("what time", "time"),
    ("when would you like to leave", "leaveAt"),
    ("leave after", "leaveAt"),
    ("arrive by", "arriveBy"),
    ("departing from", "departure"),
    ("where are you departing", "departure"),
    ("where will you be leaving from", "departure"),
    ("destination", "destination"),
    ("where are you going", "destination"),
    ("which department", "department"),
];

const BOOK_SLOTS: [&str; 4] = ["people", "day", "stay", "time"];

/// Dialogue state the NLU needs beyond the utterance itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NluContext {
    pub active_domain: Option<String>,
    /// Entities offered so far, most recent last: (domain, name).
    pub offered: Vec<(String, String)>,
}

impl NluContext {
    pub fn observe(&mut self, acts: &[SystemAct]) {
        for act in acts {
            if let SystemActKind::OfferEntity { domain, name } = &act.kind {
                self.offered.retain(|(d, n)| !(d == domain && n == name));
                self.offered.push((domain.clone(), name.clone()));
            }
        }
    }
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::Text(_) | Value::Integer(_) | Value::Time(_) => Some(v.to_string()),
        _ => None,
    }
}

fn is_flag(v: &str) -> bool {
    v == "yes" || v == "no"
}

fn entity_by_name<'a>(db: &'a DomainDatabase, domain: &str, name: &str) -> Option<&'a Entity> {
    db.entities(domain).iter().find(|e| e.display_name() == Some(name))
}

/// Reads system acts from a system utterance.
///
/// Recognizes booking references (8-digit codes), entity names from the
/// database, requestable-slot values of offered (or, failing that, active
/// domain) entities, "no result" apologies and questions asking for a
/// slot. Anything else is `Other`.
pub fn parse_system_response(text: &str, ctx: &NluContext, db: &DomainDatabase) -> Vec<SystemAct> {
    if text.trim().is_empty() {
        return vec![SystemAct::new(SystemActKind::Other, None)];
    }
    let lower = text.to_ascii_lowercase();
    let mut offers = Vec::new();
    let mut offered_here: Vec<(&str, &Entity)> = Vec::new();
    for schema in db.domains() {
        for entity in db.entities(&schema.name) {
            let Some(name) = entity.display_name() else { continue };
            if let Some(pos) = find_word(&lower, &name.to_ascii_lowercase()) {
                if offered_here.iter().any(|(_, e)| e.display_name() == Some(name)) {
                    continue;
                }
                offers.push(SystemAct::new(
                    SystemActKind::OfferEntity { domain: schema.name.clone(), name: name.to_string() },
                    Some((pos, pos + name.len())),
                ));
                offered_here.push((schema.name.as_str(), entity));
            }
        }
    }

    // Whose attribute values may be informed in this utterance.
    let mut candidates: Vec<(&str, &Entity, bool)> = offered_here.iter().map(|(d, e)| (*d, *e, true)).collect();
    if candidates.is_empty() {
        if let Some(active) = ctx.active_domain.as_deref().and_then(|d| db.schema(d)).map(|s| s.name.as_str()) {
            let recent: Vec<&Entity> = ctx
                .offered
                .iter()
                .rev()
                .filter(|(d, _)| d == active)
                .filter_map(|(d, n)| entity_by_name(db, d, n))
                .collect();
            match recent.first() {
                Some(e) => candidates.push((active, e, true)),
                None => candidates.extend(db.entities(active).iter().map(|e| (active, e, false))),
            }
        }
    }

    let mut informs: IndexMap<(String, String), SystemAct> = IndexMap::new();
    for (domain, entity, specific) in &candidates {
        let schema = db.schema(domain).expect("candidate domain exists");
        for slot in &schema.requestable {
            if informs.contains_key(&(domain.to_string(), slot.clone())) {
                continue;
            }
            let Some(value) = entity.get(slot).and_then(value_text) else { continue };
            let aliased = slot_aliases(slot).iter().find_map(|a| find_word(&lower, a));
            let found = if is_flag(&value) {
                aliased.filter(|_| *specific).map(|p| (p, p))
            } else {
                find_word(&lower, &value.to_ascii_lowercase())
                    .filter(|_| value.len() >= 8 || aliased.is_some())
                    .map(|p| (p, p + value.len()))
            };
            if let Some(span) = found {
                informs.insert(
                    (domain.to_string(), slot.clone()),
                    SystemAct::new(
                        SystemActKind::InformValue { domain: domain.to_string(), slot: slot.clone(), value },
                        Some(span),
                    ),
                );
            }
        }
    }

    let mut acts = offers;
    acts.extend(informs.into_values());
    for m in BOOKING_REF.find_iter(text) {
        acts.push(SystemAct::new(SystemActKind::BookingRef { code: m.as_str().to_string() }, Some((m.start(), m.end()))));
    }

    if let Some(domain) = ctx.active_domain.as_deref().and_then(|d| db.schema(d)) {
        let mut start = 0;
        for (i, c) in text.char_indices() {
            if matches!(c, '.' | '!' | '?') {
                let sentence = &lower[start..i];
                if c == '?' {
                    let mut seen = Vec::new();
                    for (cue, slot) in REQUEST_CUES {
                        let slot = if slot == "time" && !domain.bookable { "leaveAt" } else { slot };
                        let applicable = domain.is_informable(slot) || (domain.bookable && BOOK_SLOTS.contains(&slot));
                        if applicable && !seen.contains(&slot) && find_word(sentence, cue).is_some() {
                            seen.push(slot);
                            acts.push(SystemAct::new(
                                SystemActKind::RequestInfo { domain: domain.name.clone(), slot: slot.to_string() },
                                Some((start, i + 1)),
                            ));
                        }
                    }
                }
                start = i + 1;
            }
        }
    }

    let offered_or_booked = acts.iter().any(|a| matches!(a.kind, SystemActKind::OfferEntity { .. } | SystemActKind::BookingRef { .. }));
    if !offered_or_booked {
        if let Some(m) = NO_RESULT.find(text) {
            acts.push(SystemAct::new(SystemActKind::NoResult, Some((m.start(), m.end()))));
        }
    }
    if acts.is_empty() {
        acts.push(SystemAct::new(SystemActKind::Other, None));
    }
    acts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(acts: &[SystemAct]) -> Vec<SystemActKind> {
        acts.iter().map(|a| a.kind.clone()).collect()
    }

    fn ctx(domain: &str) -> NluContext {
        NluContext { active_domain: Some(domain.into()), offered: vec![] }
    }

    #[test]
    fn police_reply() {
        let db = DomainDatabase::bundled();
        let text = "The phone number for Parkside Police Station is 01223358966 and the postcode is cb11jg.";
        let acts = parse_system_response(text, &ctx("police"), &db);
        assert_eq!(
            kinds(&acts),
            [
                SystemActKind::OfferEntity { domain: "police".into(), name: "Parkside Police Station".into() },
                SystemActKind::InformValue { domain: "police".into(), slot: "phone".into(), value: "01223358966".into() },
                SystemActKind::InformValue { domain: "police".into(), slot: "postcode".into(), value: "cb11jg".into() },
            ]
        );
        let (s, e) = acts[1].span.unwrap();
        assert_eq!(&text[s..e], "01223358966");
    }

    #[test]
    fn booking_reference() {
        let db = DomainDatabase::bundled();
        let acts = parse_system_response(
            "Your booking reference for a reservation for 3 people for 2 nights at the home from home guesthouse on Friday is 00000021.",
            &ctx("hotel"),
            &db,
        );
        assert!(kinds(&acts).contains(&SystemActKind::BookingRef { code: "00000021".into() }));
        assert!(!kinds(&acts).contains(&SystemActKind::NoResult));
    }

    #[test]
    fn empty_and_unrelated_text() {
        let db = DomainDatabase::bundled();
        assert_eq!(kinds(&parse_system_response("", &NluContext::default(), &db)), [SystemActKind::Other]);
        assert_eq!(kinds(&parse_system_response("Goodbye! Have a nice day!", &ctx("police"), &db)), [SystemActKind::Other]);
    }

    #[test]
    fn no_result_and_questions() {
        let db = DomainDatabase::bundled();
        let acts = parse_system_response("I'm sorry, I could not find any hotel matching your request.", &ctx("hotel"), &db);
        assert_eq!(kinds(&acts), [SystemActKind::NoResult]);
        let acts = parse_system_response(
            "I have found 3 hotels matching your criteria, do you have a price range in mind ?",
            &ctx("hotel"),
            &db,
        );
        assert_eq!(kinds(&acts), [SystemActKind::RequestInfo { domain: "hotel".into(), slot: "pricerange".into() }]);
    }

    #[test]
    fn values_of_previously_offered_entity() {
        let db = DomainDatabase::bundled();
        let c = NluContext { active_domain: Some("hotel".into()), offered: vec![("hotel".into(), "hamilton lodge".into())] };
        let acts = parse_system_response("Sure, the phone number is 01223365664.", &c, &db);
        assert_eq!(
            kinds(&acts),
            [SystemActKind::InformValue { domain: "hotel".into(), slot: "phone".into(), value: "01223365664".into() }]
        );
    }

    #[test]
    fn word_boundaries() {
        assert_eq!(find_word("the junction box", "junction"), Some(4));
        assert_eq!(find_word("conjunction", "junction"), None);
        assert_eq!(find_word("tr6028.", "tr6028"), Some(0));
        assert_eq!(detect_domains("I need a taxi to the hotel"), ["taxi", "hotel"]);
    }
}
