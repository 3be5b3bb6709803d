//! Agenda-based simulated user.

mod acts;
mod goal;
pub mod nlg;
pub mod nlu;
mod status;

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::db::DomainDatabase;
use crate::dialogue::{UserAgent, UserTurn};

pub use acts::{SystemAct, SystemActKind, UserAct};
pub use goal::{generate_goal, Goal, GoalSpec};
pub use nlu::{detect_domains, parse_system_response, NluContext};
pub use status::{goal_status, BookStatus, FulfillmentReport, SlotAnswer};

/// Stack of pending user acts; the top is the last element.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agenda {
    pub stack: Vec<UserAct>,
}

impl Agenda {
    pub fn pop(&mut self) -> Option<UserAct> {
        self.stack.pop()
    }

    pub fn push(&mut self, act: UserAct) {
        // Goodbye stays at the bottom.
        if act == UserAct::Goodbye {
            return;
        }
        self.stack.push(act);
    }

    pub fn top(&self) -> Option<&UserAct> {
        self.stack.last()
    }

    pub fn is_empty(&self) -> bool {
        self.stack.is_empty()
    }

    /// Acts in pop order.
    pub fn pop_order(&self) -> Vec<&UserAct> {
        self.stack.iter().rev().collect()
    }

    fn remove(&mut self, pred: impl Fn(&UserAct) -> bool) {
        self.stack.retain(|a| !pred(a));
    }
}

/// Goodbye at the bottom, then per domain (first domain on top) the
/// booking request, the requests and the informs, so informs pop first.
pub fn init_agenda(goal: &Goal) -> Agenda {
    let mut stack = vec![UserAct::Goodbye];
    for (domain, spec) in goal.domains.iter().rev() {
        if let Some(book) = &spec.book {
            stack.push(UserAct::BookRequest { domain: domain.clone(), constraints: book.clone() });
        }
        for slot in spec.reqt.iter().rev() {
            stack.push(UserAct::Request { domain: domain.clone(), slot: slot.clone() });
        }
        for (slot, value) in spec.info.iter().rev() {
            stack.push(UserAct::Inform { domain: domain.clone(), slot: slot.clone(), value: value.clone() });
        }
    }
    Agenda { stack }
}

/// Times an unanswered request or booking is asked again.
const MAX_REPEATS: u32 = 2;
/// NoResult replies tolerated per domain before it is abandoned.
const MAX_NO_RESULTS: u32 = 2;

/// The simulated user of batch evaluation.
pub struct AgendaUser {
    goal: Goal,
    db: Arc<DomainDatabase>,
    agenda: Agenda,
    rng: ChaCha8Rng,
    pending: Vec<UserAct>,
    repeats: HashMap<String, u32>,
    no_results: HashMap<String, u32>,
    abandoned: Vec<String>,
    nlu: NluContext,
    done: bool,
}

fn act_key(act: &UserAct) -> String {
    serde_json::to_string(act).expect("acts serialize")
}

impl AgendaUser {
    pub fn new(goal: Goal, db: Arc<DomainDatabase>, seed: u64) -> Self {
        let agenda = init_agenda(&goal);
        AgendaUser {
            goal,
            db,
            agenda,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: Vec::new(),
            repeats: HashMap::new(),
            no_results: HashMap::new(),
            abandoned: Vec::new(),
            nlu: NluContext::default(),
            done: false,
        }
    }

    pub fn agenda(&self) -> &Agenda {
        &self.agenda
    }

    fn active_domain(&self) -> Option<String> {
        self.pending
            .iter()
            .chain(self.agenda.stack.iter().rev())
            .find_map(|a| a.domain().map(str::to_string))
    }

    /// Applies recognized system acts to the agenda.
    pub fn update_agenda(&mut self, acts: &[SystemAct]) {
        let pending = std::mem::take(&mut self.pending);
        let mut answered: Vec<(String, String)> = Vec::new();
        let mut booked = false;
        for act in acts {
            match &act.kind {
                SystemActKind::InformValue { domain, slot, .. } => answered.push((domain.clone(), slot.clone())),
                SystemActKind::BookingRef { .. } => booked = true,
                _ => {}
            }
        }
        let is_answered = |a: &UserAct| matches!(a, UserAct::Request { domain, slot } if answered.contains(&(domain.clone(), slot.clone())));
        self.agenda.remove(is_answered);
        if booked {
            let pending_book = pending.iter().find(|a| matches!(a, UserAct::BookRequest { .. })).cloned();
            match pending_book {
                Some(b) => self.agenda.remove(|a| *a == b),
                None => {
                    if let Some(pos) = self.agenda.stack.iter().rposition(|a| matches!(a, UserAct::BookRequest { .. })) {
                        self.agenda.stack.remove(pos);
                    }
                }
            }
        }

        // Ask again for what went unanswered.
        for act in pending.iter().rev() {
            let unanswered = match act {
                UserAct::Request { .. } => !is_answered(act),
                UserAct::BookRequest { .. } => !booked,
                _ => false,
            };
            if !unanswered || act.domain().is_some_and(|d| self.abandoned.iter().any(|x| x == d)) {
                continue;
            }
            let n = self.repeats.entry(act_key(act)).or_insert(0);
            if *n < MAX_REPEATS {
                *n += 1;
                self.agenda.push(act.clone());
            }
        }

        for act in acts {
            if let SystemActKind::RequestInfo { domain, slot } = &act.kind {
                let Some(spec) = self.goal.domains.get(domain) else { continue };
                let value = spec
                    .info
                    .get(slot)
                    .or_else(|| spec.book.as_ref().and_then(|b| b.get(slot)))
                    .cloned()
                    .unwrap_or_else(|| "dontcare".to_string());
                let inform = UserAct::Inform { domain: domain.clone(), slot: slot.clone(), value };
                if self.agenda.top() != Some(&inform) {
                    self.agenda.push(inform);
                }
            }
        }

        if acts.iter().any(|a| a.kind == SystemActKind::NoResult) {
            if let Some(domain) = self.active_domain().filter(|d| self.goal.domains.contains_key(d)) {
                let n = self.no_results.entry(domain.clone()).or_insert(0);
                *n += 1;
                if *n >= MAX_NO_RESULTS {
                    self.agenda.remove(|a| a.domain() == Some(domain.as_str()));
                    if !self.abandoned.contains(&domain) {
                        self.abandoned.push(domain);
                    }
                } else {
                    for (slot, value) in self.goal.domains[&domain].info.iter().rev() {
                        self.agenda.push(UserAct::Inform { domain: domain.clone(), slot: slot.clone(), value: value.clone() });
                    }
                }
            }
        }
    }
}

impl UserAgent for AgendaUser {
    fn goal(&self) -> &Goal {
        &self.goal
    }

    fn next_user_utterance(&mut self) -> UserTurn {
        let first = self.agenda.pop().unwrap_or(UserAct::Goodbye);
        let mut acts = vec![first];
        if let Some(next) = self.agenda.top() {
            if acts[0].compatible(next) {
                acts.push(self.agenda.pop().expect("top exists"));
            }
        }
        let text = nlg::render_user_acts(&acts, &mut self.rng);
        self.done = acts[0] == UserAct::Goodbye;
        self.pending = acts.iter().filter(|a| **a != UserAct::Goodbye).cloned().collect();
        if let Some(d) = self.active_domain() {
            self.nlu.active_domain = Some(d);
        }
        UserTurn { text, acts, done: self.done }
    }

    fn update(&mut self, system_text: &str) -> Vec<SystemAct> {
        let acts = parse_system_response(system_text, &self.nlu, &self.db);
        self.nlu.observe(&acts);
        if !self.done {
            self.update_agenda(&acts);
        }
        acts
    }

    fn abandoned(&self) -> Vec<String> {
        self.abandoned.clone()
    }
}

/// Replays fixed user utterances; used for transcript fixtures.
pub struct ScriptedUser {
    goal: Goal,
    db: Arc<DomainDatabase>,
    utterances: VecDeque<String>,
    nlu: NluContext,
}

impl ScriptedUser {
    pub fn new<I, S>(goal: Goal, db: Arc<DomainDatabase>, utterances: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let first = goal.domains.keys().next().cloned();
        ScriptedUser {
            goal,
            db,
            utterances: utterances.into_iter().map(Into::into).collect(),
            nlu: NluContext { active_domain: first, offered: Vec::new() },
        }
    }
}

impl UserAgent for ScriptedUser {
    fn goal(&self) -> &Goal {
        &self.goal
    }

    fn next_user_utterance(&mut self) -> UserTurn {
        let text = self.utterances.pop_front().unwrap_or_default();
        if let Some(d) = detect_domains(&text).into_iter().find(|d| self.goal.domains.contains_key(*d)) {
            self.nlu.active_domain = Some(d.to_string());
        }
        UserTurn { text, acts: Vec::new(), done: self.utterances.is_empty() }
    }

    fn update(&mut self, system_text: &str) -> Vec<SystemAct> {
        let acts = parse_system_response(system_text, &self.nlu, &self.db);
        self.nlu.observe(&acts);
        acts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hotel_goal() -> Goal {
        serde_json::from_str(r#"{"hotel": {"info": {"stars": "3"}, "reqt": {"phone": "?"}, "book": {"people": "3"}}}"#).unwrap()
    }

    fn act(kind: SystemActKind) -> SystemAct {
        SystemAct::new(kind, None)
    }

    #[test]
    fn agenda_pop_order() {
        let agenda = init_agenda(&hotel_goal());
        let order: Vec<String> = agenda.pop_order().iter().map(|a| act_key(a)).collect();
        assert!(order[0].contains("inform") && order[0].contains("stars"));
        assert!(order[1].contains("request") && order[1].contains("phone"));
        assert!(order[2].contains("book_request"));
        assert_eq!(agenda.pop_order()[3], &UserAct::Goodbye);

        let police: Goal = serde_json::from_str(r#"{"police": {"info": {}, "reqt": {"postcode": "?", "address": "?", "phone": "?"}}}"#).unwrap();
        let agenda = init_agenda(&police);
        assert_eq!(agenda.stack.len(), 4);
        assert_eq!(agenda.stack[0], UserAct::Goodbye);
        let empty: Goal = serde_json::from_str(r#"{"police": {}}"#).unwrap();
        assert_eq!(init_agenda(&empty).stack, [UserAct::Goodbye]);
    }

    #[test]
    fn answered_requests_and_bookings_pop() {
        let db = Arc::new(DomainDatabase::bundled());
        let mut user = AgendaUser::new(hotel_goal(), db, 1);
        let t = user.next_user_utterance();
        assert_eq!(t.acts.len(), 1);
        user.update_agenda(&[act(SystemActKind::OfferEntity { domain: "hotel".into(), name: "bridge guest house".into() })]);
        let t = user.next_user_utterance();
        assert!(matches!(&t.acts[0], UserAct::Request { slot, .. } if slot == "phone"));
        user.update_agenda(&[act(SystemActKind::InformValue { domain: "hotel".into(), slot: "phone".into(), value: "x".into() })]);
        let t = user.next_user_utterance();
        assert!(matches!(&t.acts[0], UserAct::BookRequest { .. }));
        user.update_agenda(&[act(SystemActKind::BookingRef { code: "00000001".into() })]);
        let t = user.next_user_utterance();
        assert!(t.done);
    }

    #[test]
    fn two_no_results_abandon_the_domain() {
        let db = Arc::new(DomainDatabase::bundled());
        let mut user = AgendaUser::new(hotel_goal(), db, 1);
        user.next_user_utterance();
        user.update_agenda(&[act(SystemActKind::NoResult)]);
        // The informs are stated again.
        assert!(matches!(user.agenda().top(), Some(UserAct::Inform { slot, .. }) if slot == "stars"));
        user.next_user_utterance();
        user.update_agenda(&[act(SystemActKind::NoResult)]);
        assert_eq!(user.abandoned(), ["hotel"]);
        assert_eq!(user.agenda().stack, [UserAct::Goodbye]);
    }

    #[test]
    fn request_info_pushes_goal_value() {
        let db = Arc::new(DomainDatabase::bundled());
        let mut user = AgendaUser::new(hotel_goal(), db, 1);
        user.next_user_utterance();
        user.update_agenda(&[act(SystemActKind::RequestInfo { domain: "hotel".into(), slot: "people".into() })]);
        assert_eq!(
            user.agenda().top(),
            Some(&UserAct::Inform { domain: "hotel".into(), slot: "people".into(), value: "3".into() })
        );
    }

    #[test]
    fn unanswered_request_repeats_a_bounded_number_of_times() {
        let db = Arc::new(DomainDatabase::bundled());
        let goal: Goal = serde_json::from_str(r#"{"police": {"info": {}, "reqt": {"phone": "?"}}}"#).unwrap();
        let mut user = AgendaUser::new(goal, db, 1);
        let mut asked = 0;
        loop {
            let t = user.next_user_utterance();
            if t.done {
                break;
            }
            asked += 1;
            user.update_agenda(&[act(SystemActKind::Other)]);
        }
        assert_eq!(asked, 1 + MAX_REPEATS as usize);
    }

    #[test]
    fn seeded_user_is_deterministic() {
        let db = Arc::new(DomainDatabase::bundled());
        let run = || {
            let goal = generate_goal(&db, 42);
            let mut user = AgendaUser::new(goal, Arc::clone(&db), 42);
            (0..4)
                .map(|_| {
                    let t = user.next_user_utterance();
                    user.update("Sorry, could you repeat that?");
                    t.text
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
