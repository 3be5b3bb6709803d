//! Template surface realization of user acts.

use rand::seq::SliceRandom;
use rand::Rng;

use super::acts::UserAct;
use crate::db::is_dontcare;

pub fn domain_noun(domain: &str) -> &str {
    match domain {
        "police" => "police station",
        other => other,
    }
}

/// How users name a slot when asking for it.
pub fn slot_phrase(slot: &str) -> &str {
    match slot {
        "phone" => "phone number",
        "pricerange" => "price range",
        "food" => "type of food",
        "stars" => "star rating",
        "entrancefee" => "entrance fee",
        "arriveBy" => "arrival time",
        "leaveAt" => "departure time",
        "duration" => "travel time",
        "trainID" => "train ID",
        "color" => "car colour",
        "type" => "type",
        other => other,
    }
}

/// Phrase stating a constraint, e.g. `with a 3 star rating`.
pub fn inform_phrase(slot: &str, value: &str) -> String {
    match (slot, value) {
        ("area", v) => format!("in the {v}"),
        ("pricerange", v) => format!("in the {v} price range"),
        ("food", v) => format!("serving {v} food"),
        ("stars", v) => format!("with a {v} star rating"),
        ("internet", "no") => "with no internet".into(),
        ("internet", _) => "with free wifi".into(),
        ("parking", "no") => "with no parking".into(),
        ("parking", _) => "with free parking".into(),
        ("type", v) => format!("that is a {v}"),
        ("name", v) => format!("called {v}"),
        ("day", v) => format!("on {v}"),
        ("leaveAt", v) => format!("leaving after {v}"),
        ("arriveBy", v) => format!("arriving by {v}"),
        ("departure", v) => format!("departing from {v}"),
        ("destination", v) => format!("going to {v}"),
        ("department", v) => format!("with the {v} department"),
        ("people", v) => format!("for {v} people"),
        ("stay", v) => format!("for {v} nights"),
        ("time", v) => format!("at {v}"),
        (s, v) => format!("with {} {v}", slot_phrase(s)),
    }
}

fn pick<'a, R: Rng>(rng: &mut R, forms: &[&'a str]) -> &'a str {
    forms.choose(rng).expect("template family is non-empty")
}

fn fill(form: &str, noun: &str, body: &str) -> String {
    form.replace("{noun}", noun).replace("{x}", body)
}

fn render_informs<R: Rng>(domain: &str, pairs: &[(&str, &str)], rng: &mut R) -> String {
    let noun = domain_noun(domain);
    let (dontcare, real): (Vec<_>, Vec<_>) = pairs.iter().partition(|(_, v)| is_dontcare(&v.to_lowercase()));
    let mut out = Vec::new();
    if !real.is_empty() {
        let body = real.iter().map(|(s, v)| inform_phrase(s, v)).collect::<Vec<_>>().join(" and ");
        let form = pick(
            rng,
            &["I am looking for a {noun} {x}.", "I need a {noun} {x}.", "Can you help me find a {noun} {x}?", "I would like a {noun} {x}."],
        );
        out.push(fill(form, noun, &body));
    }
    for (slot, _) in dontcare {
        let form = pick(rng, &["I don't have a preference for the {x}.", "Any {x} is fine for the {noun}."]);
        out.push(fill(form, noun, slot_phrase(slot)));
    }
    out.join(" ")
}

fn render_request<R: Rng>(domain: &str, slot: &str, rng: &mut R) -> String {
    let form = pick(
        rng,
        &[
            "Can you give me the {x} of the {noun} please?",
            "What is the {x} of the {noun}?",
            "Could you tell me the {x} of the {noun}?",
            "Can I please have the {x} of the {noun} as well?",
        ],
    );
    fill(form, domain_noun(domain), slot_phrase(slot))
}

fn render_book<R: Rng>(domain: &str, constraints: &indexmap::IndexMap<String, String>, rng: &mut R) -> String {
    let body = constraints.iter().map(|(s, v)| inform_phrase(s, v)).collect::<Vec<_>>().join(" ");
    let noun = domain_noun(domain);
    let form = match domain {
        "train" => pick(rng, &["Please book tickets {x}.", "Can you book the train {x}?", "I would like to reserve tickets {x}."]),
        "restaurant" => pick(rng, &["Can you book a table {x}?", "Please reserve a table {x}.", "I would like to book a table {x}."]),
        _ => pick(rng, &["Can you book the {noun} {x}?", "Please make a reservation {x}.", "I would like to book it {x}."]),
    };
    let text = fill(form, noun, &body);
    text.replace("  ", " ").replace(" ?", "?").replace(" .", ".")
}

/// Renders popped acts as one user utterance.
pub fn render_user_acts<R: Rng>(acts: &[UserAct], rng: &mut R) -> String {
    let mut sentences = Vec::new();
    let informs: Vec<(&str, &str, &str)> = acts
        .iter()
        .filter_map(|a| match a {
            UserAct::Inform { domain, slot, value } => Some((domain.as_str(), slot.as_str(), value.as_str())),
            _ => None,
        })
        .collect();
    if let Some((domain, ..)) = informs.first() {
        let pairs: Vec<(&str, &str)> = informs.iter().map(|(_, s, v)| (*s, *v)).collect();
        sentences.push(render_informs(domain, &pairs, rng));
    }
    for act in acts {
        match act {
            UserAct::Request { domain, slot } => sentences.push(render_request(domain, slot, rng)),
            UserAct::BookRequest { domain, constraints } => sentences.push(render_book(domain, constraints, rng)),
            UserAct::Goodbye => sentences.push(
                pick(
                    rng,
                    &[
                        "You were great . Goodbye .",
                        "Thank you, that is all I need. Goodbye.",
                        "Thanks for your help, bye.",
                        "That's everything I needed, goodbye.",
                    ],
                )
                .to_string(),
            ),
            UserAct::Inform { .. } => {}
        }
    }
    sentences.join(" ")
}
