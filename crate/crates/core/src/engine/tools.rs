//! The four database tools as the agent sees them.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{render_entities, render_list, BeliefState, BookingLedger, DomainDatabase, SlotPolicy, ToolError};
use crate::doc::Doc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolHandler {
    ListDomains,
    ListSlots,
    DbQuery,
    GetBookingReference,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub annotation: Option<&'static str>,
    pub default: Option<&'static str>,
}

impl fmt::Display for ParamSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)?;
        if let Some(a) = self.annotation {
            write!(f, ": {a}")?;
        }
        if let Some(d) = self.default {
            write!(f, "={d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub handler: ToolHandler,
}

impl ToolSpec {
    /// `name(params) - description`
    pub fn render(&self) -> String {
        let params: Vec<String> = self.params.iter().map(ToString::to_string).collect();
        format!("{}({}) - {}", self.name, params.join(", "), self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolkitError {
    #[error("a toolkit needs at least one tool")]
    Empty,
    #[error("tool name '{0}' is used twice")]
    Duplicate(String),
    #[error("tool name '{0}' is not a single token")]
    BadName(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Toolkit {
    tools: Vec<ToolSpec>,
}

fn param(name: &'static str, annotation: Option<&'static str>, default: Option<&'static str>) -> ParamSpec {
    ParamSpec { name, annotation, default }
}

impl Toolkit {
    pub fn new(tools: Vec<ToolSpec>) -> Result<Self, ToolkitError> {
        if tools.is_empty() {
            return Err(ToolkitError::Empty);
        }
        for (i, t) in tools.iter().enumerate() {
            if t.name.is_empty() || !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(ToolkitError::BadName(t.name.clone()));
            }
            if tools[..i].iter().any(|o| o.name == t.name) {
                return Err(ToolkitError::Duplicate(t.name.clone()));
            }
        }
        Ok(Toolkit { tools })
    }

    pub fn standard() -> Self {
        let tools = vec![
            ToolSpec {
                name: "list_domains".into(),
                description: "This function lists the domains available in the database. Use this tool first to find \
                              the available domains and identify the correct domain for the user's request."
                    .into(),
                params: vec![],
                handler: ToolHandler::ListDomains,
            },
            ToolSpec {
                name: "list_slots".into(),
                description: "This function lists the slot names available for a given domain. Use this function \
                              after list_domains and before using db_query to identify the slots available for the \
                              selected domain."
                    .into(),
                params: vec![param("domain", None, None)],
                handler: ToolHandler::ListSlots,
            },
            ToolSpec {
                name: "db_query".into(),
                description: "This function is used to query the database to retrieve information in the belief \
                              state. Form the belief state with the domain and slots that were identified using \
                              list_domains and list_slots tools."
                    .into(),
                params: vec![param("domain", Some("str"), None), param("state", Some("dict"), None), param("topk", None, Some("1"))],
                handler: ToolHandler::DbQuery,
            },
            ToolSpec {
                name: "get_booking_reference".into(),
                description: "This function is used to generate a booking reference for the service selected by the user."
                    .into(),
                params: vec![param("domain", None, None), param("utterance", None, Some("None"))],
                handler: ToolHandler::GetBookingReference,
            },
        ];
        Toolkit::new(tools).expect("standard toolkit is valid")
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    /// One line per tool, in registration order.
    pub fn render_descriptions(&self) -> String {
        self.tools.iter().map(ToolSpec::render).collect::<Vec<_>>().join("\n")
    }

    pub fn render_names(&self) -> String {
        self.names().join(", ")
    }

    /// Runs a tool. Errors become the observation text so the model can
    /// correct itself.
    pub fn dispatch(&self, name: &str, input: &Doc, ctx: &mut ToolContext<'_>) -> ToolCall {
        let outcome = match self.get(name) {
            None => Err(ToolError::bad_input(format!(
                "'{name}' is not a valid tool; use one of [{}]",
                self.render_names()
            ))),
            Some(spec) => run_handler(spec.handler, input, ctx),
        };
        let (observation, status, query) = match outcome {
            Ok((text, query)) => (text, CallStatus::Ok, query),
            Err(e) => (format!("Error: {}", e.message), CallStatus::Error, None),
        };
        ToolCall { tool: name.to_string(), input: input.clone(), observation, status, query }
    }
}

/// Mutable state a tool call may touch.
pub struct ToolContext<'a> {
    pub db: &'a DomainDatabase,
    pub ledger: &'a mut BookingLedger,
    pub policy: SlotPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub input: Doc,
    pub observation: String,
    pub status: CallStatus,
    /// Set for successful `db_query` calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QueryRecord>,
}

/// A successful query: the canonical domain, its constraints and whether
/// every slot was in the schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub domain: String,
    pub constraints: IndexMap<String, String>,
    pub schema_valid: bool,
    pub results: Vec<String>,
}

/// Arguments of a `db_query` call as the model wrote them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryArgs {
    pub domain: String,
    pub state: BeliefState,
    pub topk: usize,
}

fn scalar_arg<'d>(input: &'d Doc, key: &str) -> Option<&'d str> {
    input.get(key).and_then(Doc::as_scalar).map(str::trim).filter(|s| !s.is_empty() && *s != "None")
}

fn require_domain(input: &Doc) -> Result<&str, ToolError> {
    scalar_arg(input, "domain").ok_or_else(|| ToolError::bad_input("missing required parameter 'domain'"))
}

fn doc_text(doc: &Doc) -> String {
    match doc {
        Doc::Scalar(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Reads `domain`, `state` and `topk` from a db_query input.
///
/// `state` is normally `{domain: {slot: value}}`; a flat `{slot: value}` map
/// is read as constraints for the queried domain. When `domain` is missing
/// and the state names exactly one domain, that domain is used.
pub fn query_args(input: &Doc) -> Result<QueryArgs, ToolError> {
    let parsed_state;
    let state_doc = match input.get("state") {
        None => None,
        Some(Doc::Scalar(s)) if s.trim().is_empty() || s.trim() == "None" => None,
        Some(Doc::Scalar(s)) => {
            parsed_state = Doc::parse(s).map_err(|e| ToolError::bad_input(format!("state is not a document: {e}")))?;
            Some(&parsed_state)
        }
        Some(d) => Some(d),
    };
    let state_map = match state_doc {
        None => None,
        Some(d) => Some(d.as_map().ok_or_else(|| ToolError::bad_input("state must be a map of domain to slots"))?),
    };

    let domain = match scalar_arg(input, "domain") {
        Some(d) => d.to_string(),
        None => {
            let nested: Vec<&String> =
                state_map.map(|m| m.iter().filter(|(_, v)| v.as_map().is_some()).map(|(k, _)| k).collect()).unwrap_or_default();
            match nested.as_slice() {
                [only] => only.to_string(),
                _ => return Err(ToolError::bad_input("missing required parameter 'domain'")),
            }
        }
    };

    let mut state = BeliefState::new();
    if let Some(map) = state_map {
        let mut flat = IndexMap::new();
        for (key, value) in map {
            match value {
                Doc::Map(slots) => {
                    let entry = state.constraints.entry(key.trim().to_ascii_lowercase()).or_default();
                    for (slot, v) in slots {
                        entry.insert(slot.clone(), doc_text(v));
                    }
                }
                other => {
                    flat.insert(key.clone(), doc_text(other));
                }
            }
        }
        if !flat.is_empty() {
            state.constraints.entry(domain.trim().to_ascii_lowercase()).or_default().extend(flat);
        }
    }

    let topk = match scalar_arg(input, "topk") {
        None => 1,
        Some(t) => t
            .parse::<usize>()
            .ok()
            .filter(|k| *k > 0)
            .ok_or_else(|| ToolError::bad_input(format!("topk must be a positive integer, got '{t}'")))?,
    };
    Ok(QueryArgs { domain, state, topk })
}

fn run_handler(
    handler: ToolHandler,
    input: &Doc,
    ctx: &mut ToolContext<'_>,
) -> Result<(String, Option<QueryRecord>), ToolError> {
    if input.as_map().is_none() {
        return Err(ToolError::bad_input("the input must be a map of parameter names to values"));
    }
    match handler {
        ToolHandler::ListDomains => Ok((render_list(&ctx.db.list_domains()), None)),
        ToolHandler::ListSlots => Ok((render_list(&ctx.db.list_slots(require_domain(input)?)?), None)),
        ToolHandler::GetBookingReference => {
            let domain = require_domain(input)?;
            let utterance = input.get("utterance").map(doc_text).filter(|u| !u.trim().is_empty() && u != "None");
            Ok((ctx.ledger.get_booking_reference(ctx.db, domain, utterance.as_deref())?, None))
        }
        ToolHandler::DbQuery => {
            let args = query_args(input)?;
            let result = ctx.db.db_query(&args.domain, &args.state, args.topk, ctx.policy)?;
            let schema = ctx.db.schema(&args.domain).expect("db_query succeeded, so the domain exists");
            let raw = args.state.domain(&schema.name).cloned().unwrap_or_default();
            let schema_valid = raw.keys().all(|s| schema.resolve_slot(s).is_some());
            let constraints = raw
                .iter()
                .filter_map(|(s, v)| schema.resolve_slot(s).map(|c| (c.to_string(), v.clone())))
                .collect();
            let mut text = render_entities(&result.entities);
            for w in &result.warnings {
                text.push_str(&format!("\nWarning: {w}"));
            }
            let results = result
                .entities
                .iter()
                .map(|e| e.display_name().map(str::to_string).unwrap_or_else(|| e.id().to_string()))
                .collect();
            let record = QueryRecord { domain: schema.name.clone(), constraints, schema_valid, results };
            Ok((text, Some(record)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> Doc {
        Doc::parse(s).unwrap()
    }

    #[test]
    fn descriptions_match_listing() {
        let text = Toolkit::standard().render_descriptions();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("list_domains() - This function lists the domains"));
        assert!(lines[1].starts_with("list_slots(domain) - "));
        assert!(lines[2].starts_with("db_query(domain: str, state: dict, topk=1) - "));
        assert!(lines[3].starts_with("get_booking_reference(domain, utterance=None) - "));
        assert_eq!(Toolkit::standard().render_names(), "list_domains, list_slots, db_query, get_booking_reference");
    }

    #[test]
    fn toolkit_validation() {
        let spec = |name: &str| ToolSpec {
            name: name.into(),
            description: "d".into(),
            params: vec![],
            handler: ToolHandler::ListDomains,
        };
        let single = Toolkit::new(vec![spec("only")]).unwrap();
        assert_eq!(single.render_descriptions(), "only() - d");
        assert_eq!(Toolkit::new(vec![]), Err(ToolkitError::Empty));
        assert_eq!(Toolkit::new(vec![spec("a"), spec("a")]), Err(ToolkitError::Duplicate("a".into())));
        assert_eq!(Toolkit::new(vec![spec("two words")]), Err(ToolkitError::BadName("two words".into())));
    }

    #[test]
    fn query_argument_shapes() {
        let nested = query_args(&doc("{domain: hotel, state: {hotel: {stars: 3}}, topk: 3}")).unwrap();
        assert_eq!(nested.topk, 3);
        assert_eq!(nested.state.domain("hotel").unwrap()["stars"], "3");
        let flat = query_args(&doc("{domain: hotel, state: {stars: 3}}")).unwrap();
        assert_eq!(flat.state, nested.state);
        let typo = query_args(&doc("{domai: hotel, state: {hotel: {stars: 3}}}")).unwrap();
        assert_eq!(typo.domain, "hotel");
        assert_eq!(typo.topk, 1);
        assert!(query_args(&doc("{domain: hotel, topk: 0}")).is_err());
        assert!(query_args(&doc("{state: {}}")).is_err());
    }

    #[test]
    fn dispatch_reports_errors_as_observations() {
        let db = DomainDatabase::bundled();
        let mut ledger = BookingLedger::new();
        let kit = Toolkit::standard();
        let mut ctx = ToolContext { db: &db, ledger: &mut ledger, policy: SlotPolicy::Strict };
        let call = kit.dispatch("list_slots", &doc("{domain: spaceport}"), &mut ctx);
        assert_eq!(call.status, CallStatus::Error);
        assert!(call.observation.starts_with("Error: unknown domain"));
        let call = kit.dispatch("db_query", &doc("{domain: train, state: {train: {time: after 14:15}}}"), &mut ctx);
        assert!(call.observation.starts_with("Error: Invalid slots: [time]"), "{}", call.observation);
        let call = kit.dispatch("get_booking_reference", &doc("{domain: hotel}"), &mut ctx);
        assert_eq!(call.observation, "00000001");
        let call = kit.dispatch("db_query", &doc("{domain: police, state: {police: {}}}"), &mut ctx);
        assert_eq!(
            call.observation,
            "[{name: Parkside Police Station, address: Parkside, Cambridge, id: 0, phone: 01223358966, postcode: cb11jg}]"
        );
        let q = call.query.unwrap();
        assert!(q.schema_valid);
        assert_eq!(q.results, ["Parkside Police Station"]);
    }

    #[test]
    fn lenient_query_records_invalid_state() {
        let db = DomainDatabase::bundled();
        let mut ledger = BookingLedger::new();
        let mut ctx = ToolContext { db: &db, ledger: &mut ledger, policy: SlotPolicy::Lenient };
        let call = Toolkit::standard().dispatch(
            "db_query",
            &doc("{domain: train, state: {train: {leaveat: 14:15, time: x, day: monday}}}"),
            &mut ctx,
        );
        let q = call.query.unwrap();
        assert!(!q.schema_valid);
        assert_eq!(q.constraints.keys().collect::<Vec<_>>(), ["leaveAt", "day"]);
        assert!(call.observation.contains("Warning: ignored unknown slot 'time'"));
    }
}
