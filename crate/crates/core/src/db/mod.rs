//! Multi-domain venue/travel database and the data semantics behind the
//! agent's tools: domain and slot introspection, constraint queries and
//! booking references.

mod index;
mod ledger;
mod matching;
mod value;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub use ledger::{BookingLedger, BookingRecord};
pub use matching::{matches, value_satisfies};
pub use value::{is_dontcare, normalize, TimeOfDay, Value};

use index::DomainIndex;

/// Attributes every entity carries whether or not the schema lists them.
pub const RESERVED_KEYS: [&str; 2] = ["id", "Ref"];

const BUNDLED_DB: &str = include_str!("../../assets/db.json");

#[derive(Debug, Error)]
pub enum DbError {
    #[error("cannot read database file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed database document: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("domain '{domain}': {message}")]
    Schema { domain: String, message: String },
    #[error("domain '{domain}', entity #{index}: {message}")]
    Entity { domain: String, index: usize, message: String },
}

/// Error returned by a tool; its message is fed back to the model as an
/// observation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct ToolError {
    pub kind: ToolErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolErrorKind {
    UnknownDomain,
    InvalidSlots(Vec<String>),
    NotBookable,
    BadInput,
}

impl ToolError {
    pub fn bad_input(message: impl Into<String>) -> Self {
        ToolError { kind: ToolErrorKind::BadInput, message: message.into() }
    }
}

/// How `db_query` treats constraint slots missing from the schema.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotPolicy {
    /// Reject the query with an "Invalid slots" error.
    #[default]
    Strict,
    /// Drop unknown slots and report them as warnings.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DomainSchema {
    pub name: String,
    pub slots: Vec<String>,
    pub informable: Vec<String>,
    pub requestable: Vec<String>,
    pub bookable: bool,
}

impl DomainSchema {
    /// Case-insensitive slot lookup returning the schema spelling.
    pub fn resolve_slot(&self, slot: &str) -> Option<&str> {
        let wanted = slot.trim();
        self.slots
            .iter()
            .find(|s| s.eq_ignore_ascii_case(wanted))
            .map(String::as_str)
    }

    pub fn is_informable(&self, slot: &str) -> bool {
        self.informable.iter().any(|s| s == slot)
    }

    pub fn is_requestable(&self, slot: &str) -> bool {
        self.requestable.iter().any(|s| s == slot)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub attributes: IndexMap<String, Value>,
}

impl Entity {
    /// Case-insensitive attribute lookup.
    pub fn get(&self, slot: &str) -> Option<&Value> {
        self.attributes
            .get(slot)
            .or_else(|| self.attributes.iter().find(|(k, _)| k.eq_ignore_ascii_case(slot)).map(|(_, v)| v))
    }

    pub fn id(&self) -> &Value {
        self.attributes.get("id").expect("entities always carry an id")
    }

    /// The attribute a conversation uses to refer to this entity.
    pub fn display_name(&self) -> Option<&str> {
        ["name", "trainID", "department"]
            .iter()
            .find_map(|k| self.attributes.get(*k).and_then(Value::as_text))
    }
}

/// Renders as `{slot: value, ...}` in attribute order, the observation format
/// the prompt exemplar uses.
impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.attributes.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}: {v}")?;
        }
        f.write_str("}")
    }
}

/// Renders entities the way tool observations list them.
pub fn render_entities(entities: &[&Entity]) -> String {
    let parts: Vec<String> = entities.iter().map(|e| e.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

pub fn render_list<S: AsRef<str>>(items: &[S]) -> String {
    let parts: Vec<&str> = items.iter().map(AsRef::as_ref).collect();
    format!("[{}]", parts.join(", "))
}

/// Accumulated user constraints: domain → slot → constraint text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState {
    pub constraints: IndexMap<String, IndexMap<String, String>>,
}

impl BeliefState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_domain(mut self, domain: &str, pairs: &[(&str, &str)]) -> Self {
        let entry = self.constraints.entry(domain.to_string()).or_default();
        for (k, v) in pairs {
            entry.insert(k.to_string(), v.to_string());
        }
        self
    }

    pub fn domain(&self, domain: &str) -> Option<&IndexMap<String, String>> {
        self.constraints.get(domain)
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Domains absent from the database.
    pub fn invalid_domains(&self, db: &DomainDatabase) -> Vec<String> {
        self.constraints.keys().filter(|d| db.schema(d).is_none()).cloned().collect()
    }

    /// Slots (as `domain.slot`) absent from their domain's schema.
    pub fn invalid_slots(&self, db: &DomainDatabase) -> Vec<String> {
        let mut out = Vec::new();
        for (domain, slots) in &self.constraints {
            if let Some(schema) = db.schema(domain) {
                for slot in slots.keys() {
                    if schema.resolve_slot(slot).is_none() {
                        out.push(format!("{domain}.{slot}"));
                    }
                }
            }
        }
        out
    }

    pub fn is_valid(&self, db: &DomainDatabase) -> bool {
        self.invalid_domains(db).is_empty() && self.invalid_slots(db).is_empty()
    }
}

/// Entities returned by a query plus warnings about ignored slots.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult<'a> {
    pub entities: Vec<&'a Entity>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct DomainDatabase {
    domains: Vec<DomainSchema>,
    entities: Vec<Vec<Entity>>,
    indexes: Vec<DomainIndex>,
}

impl DomainDatabase {
    /// The fixture database shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_DB).expect("bundled database is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DbError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, DbError> {
        let raw: RawDatabase = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawDatabase) -> Result<Self, DbError> {
        let mut domains = Vec::with_capacity(raw.domains.0.len());
        for (name, spec) in raw.domains.0 {
            let schema_err = |message: String| DbError::Schema { domain: name.clone(), message };
            if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                return Err(schema_err("domain names must be lowercase tokens".into()));
            }
            let mut seen = HashSet::new();
            for slot in &spec.slots {
                if !seen.insert(slot.as_str()) {
                    return Err(schema_err(format!("duplicate slot '{slot}'")));
                }
                if slot == "Ref" {
                    return Err(schema_err("'Ref' is derived and cannot be declared".into()));
                }
            }
            for slot in spec.informable.iter().chain(&spec.requestable) {
                if !seen.contains(slot.as_str()) {
                    return Err(schema_err(format!("slot '{slot}' is not in the slot list")));
                }
            }
            domains.push(DomainSchema {
                name,
                slots: spec.slots,
                informable: spec.informable,
                requestable: spec.requestable,
                bookable: spec.bookable,
            });
        }

        let mut raw_entities: HashMap<String, Vec<IndexMap<String, serde_json::Value>>> =
            HashMap::with_capacity(raw.entities.0.len());
        for (domain, list) in raw.entities.0 {
            if !domains.iter().any(|d| d.name == domain) {
                return Err(DbError::Schema { domain, message: "entities listed for an undeclared domain".into() });
            }
            raw_entities.insert(domain, list);
        }

        let mut entities = Vec::with_capacity(domains.len());
        for schema in &domains {
            let list = raw_entities.remove(&schema.name).unwrap_or_default();
            let mut ids = HashSet::new();
            let mut out = Vec::with_capacity(list.len());
            for (index, raw_entity) in list.into_iter().enumerate() {
                let entity = build_entity(schema, raw_entity).map_err(|message| DbError::Entity {
                    domain: schema.name.clone(),
                    index,
                    message,
                })?;
                if !ids.insert(entity.id().to_string()) {
                    return Err(DbError::Entity {
                        domain: schema.name.clone(),
                        index,
                        message: format!("duplicate id {}", entity.id()),
                    });
                }
                out.push(entity);
            }
            entities.push(out);
        }

        let indexes = entities.iter().map(|list| DomainIndex::build(list)).collect();
        Ok(DomainDatabase { domains, entities, indexes })
    }

    pub fn domains(&self) -> &[DomainSchema] {
        &self.domains
    }

    fn position(&self, domain: &str) -> Option<usize> {
        let wanted = normalize(domain);
        self.domains.iter().position(|d| d.name == wanted)
    }

    pub fn schema(&self, domain: &str) -> Option<&DomainSchema> {
        self.position(domain).map(|i| &self.domains[i])
    }

    pub fn entities(&self, domain: &str) -> &[Entity] {
        self.position(domain).map(|i| self.entities[i].as_slice()).unwrap_or(&[])
    }

    /// Domain names in schema order.
    pub fn list_domains(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.name.as_str()).collect()
    }

    /// Slot names of a domain in schema order.
    pub fn list_slots(&self, domain: &str) -> Result<Vec<&str>, ToolError> {
        let schema = self.schema(domain).ok_or_else(|| self.unknown_domain(domain))?;
        Ok(schema.slots.iter().map(String::as_str).collect())
    }

    pub(crate) fn unknown_domain(&self, domain: &str) -> ToolError {
        ToolError {
            kind: ToolErrorKind::UnknownDomain,
            message: format!(
                "unknown domain '{}'; valid domains are {}",
                domain.trim(),
                render_list(&self.list_domains())
            ),
        }
    }

    /// First `topk` entities of `domain`, in database order, matching the
    /// domain's constraints in `state`.
    pub fn db_query(
        &self,
        domain: &str,
        state: &BeliefState,
        topk: usize,
        policy: SlotPolicy,
    ) -> Result<QueryResult<'_>, ToolError> {
        let empty = IndexMap::new();
        let pos = self.position(domain).ok_or_else(|| self.unknown_domain(domain))?;
        let schema = &self.domains[pos];
        let constraints = state.domain(&schema.name).unwrap_or(&empty);
        self.query_constraints(&schema.name, constraints, topk, policy)
    }

    /// Same as [`db_query`](Self::db_query) for a bare slot → constraint map.
    pub fn query_constraints(
        &self,
        domain: &str,
        constraints: &IndexMap<String, String>,
        topk: usize,
        policy: SlotPolicy,
    ) -> Result<QueryResult<'_>, ToolError> {
        if topk == 0 {
            return Err(ToolError::bad_input("topk must be a positive integer"));
        }
        let pos = self.position(domain).ok_or_else(|| self.unknown_domain(domain))?;
        let schema = &self.domains[pos];

        let mut resolved = Vec::with_capacity(constraints.len());
        let mut invalid = Vec::new();
        for (slot, constraint) in constraints {
            match schema.resolve_slot(slot) {
                Some(canonical) => resolved.push((canonical, constraint.as_str())),
                None => invalid.push(slot.clone()),
            }
        }
        let mut warnings = Vec::new();
        if !invalid.is_empty() {
            match policy {
                SlotPolicy::Strict => {
                    return Err(ToolError {
                        message: format!(
                            "Invalid slots: {}. Valid slots for {} are {}",
                            render_list(&invalid),
                            schema.name,
                            render_list(&schema.slots)
                        ),
                        kind: ToolErrorKind::InvalidSlots(invalid),
                    })
                }
                SlotPolicy::Lenient => {
                    warnings.extend(invalid.iter().map(|s| format!("ignored unknown slot '{s}'")));
                }
            }
        }

        let list = &self.entities[pos];
        let hits = self.indexes[pos].lookup(&resolved);
        Ok(QueryResult { entities: hits.into_iter().take(topk).map(|i| &list[i]).collect(), warnings })
    }
}

fn build_entity(schema: &DomainSchema, raw: IndexMap<String, serde_json::Value>) -> Result<Entity, String> {
    let mut attributes = IndexMap::with_capacity(raw.len() + 1);
    let mut declared_ref = None;
    for (key, json) in raw {
        if key == "Ref" {
            declared_ref = Some(json);
            continue;
        }
        if !RESERVED_KEYS.contains(&key.as_str()) && !schema.slots.contains(&key) {
            return Err(format!("attribute '{key}' is not a slot of the domain"));
        }
        let value = Value::from_json(&json).map_err(|e| format!("attribute '{key}': {e}"))?;
        attributes.insert(key, value);
    }
    let id = match attributes.get("id") {
        Some(id) => id.clone(),
        None => return Err("missing 'id'".into()),
    };
    if schema.bookable {
        let expected = match id {
            Value::Integer(n) if n >= 0 => format!("{n:08}"),
            _ => return Err("bookable entities need a non-negative integer id".into()),
        };
        if let Some(declared) = declared_ref {
            if declared.as_str() != Some(expected.as_str()) {
                return Err(format!("Ref must equal the zero-padded id {expected}"));
            }
        }
        attributes.insert("Ref".to_string(), Value::Text(expected));
    } else if declared_ref.is_some() {
        return Err("'Ref' is only valid in bookable domains".into());
    }
    Ok(Entity { attributes })
}

#[derive(Deserialize)]
struct RawDatabase {
    #[serde(default)]
    domains: Ordered<RawDomain>,
    #[serde(default)]
    entities: Ordered<Vec<IndexMap<String, serde_json::Value>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    slots: Vec<String>,
    #[serde(default)]
    informable: Vec<String>,
    #[serde(default)]
    requestable: Vec<String>,
    #[serde(default)]
    bookable: bool,
}

/// An object read as ordered entries, rejecting duplicate keys.
struct Ordered<T>(Vec<(String, T)>);

impl<T> Default for Ordered<T> {
    fn default() -> Self {
        Ordered(Vec::new())
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Ordered<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct OrderedVisitor<T>(std::marker::PhantomData<T>);

        impl<'de, T: Deserialize<'de>> Visitor<'de> for OrderedVisitor<T> {
            type Value = Ordered<T>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut out: Vec<(String, T)> = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, T>()? {
                    if out.iter().any(|(seen, _)| *seen == k) {
                        return Err(serde::de::Error::custom(format!("duplicate key '{k}'")));
                    }
                    out.push((k, v));
                }
                Ok(Ordered(out))
            }
        }

        deserializer.deserialize_map(OrderedVisitor(std::marker::PhantomData))
    }
}
