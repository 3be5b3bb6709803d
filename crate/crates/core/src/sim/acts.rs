use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "act", rename_all = "snake_case")]
pub enum UserAct {
    Inform { domain: String, slot: String, value: String },
    Request { domain: String, slot: String },
    BookRequest { domain: String, constraints: IndexMap<String, String> },
    Goodbye,
}

impl UserAct {
    pub fn domain(&self) -> Option<&str> {
        match self {
            UserAct::Inform { domain, .. } | UserAct::Request { domain, .. } | UserAct::BookRequest { domain, .. } => {
                Some(domain)
            }
            UserAct::Goodbye => None,
        }
    }

    /// Acts of the same kind and domain can share one utterance.
    pub fn compatible(&self, other: &UserAct) -> bool {
        match (self, other) {
            (UserAct::Inform { domain: a, .. }, UserAct::Inform { domain: b, .. })
            | (UserAct::Request { domain: a, .. }, UserAct::Request { domain: b, .. }) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "act", rename_all = "snake_case")]
pub enum SystemActKind {
    InformValue { domain: String, slot: String, value: String },
    OfferEntity { domain: String, name: String },
    BookingRef { code: String },
    NoResult,
    RequestInfo { domain: String, slot: String },
    Other,
}

/// A system act with the byte span of the utterance it was read from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemAct {
    #[serde(flatten)]
    pub kind: SystemActKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

impl SystemAct {
    pub fn new(kind: SystemActKind, span: Option<(usize, usize)>) -> Self {
        SystemAct { kind, span }
    }
}
