use std::fmt;

use indexmap::IndexMap;
use serde_json::Value as Json;

/// A time of day in minutes after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeOfDay(u16);

impl TimeOfDay {
    pub fn new(hours: u16, minutes: u16) -> Option<Self> {
        (hours < 24 && minutes < 60).then_some(TimeOfDay(hours * 60 + minutes))
    }

    pub fn minutes(self) -> u16 {
        self.0
    }

    /// Parses an exact `H:MM` / `HH:MM` string.
    pub fn parse_exact(s: &str) -> Option<Self> {
        let (h, m) = s.trim().split_once(':')?;
        if h.is_empty() || h.len() > 2 || m.len() != 2 {
            return None;
        }
        if !h.bytes().all(|b| b.is_ascii_digit()) || !m.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        TimeOfDay::new(h.parse().ok()?, m.parse().ok()?)
    }

    /// Finds the first `H:MM` token inside free text ("after 14:15").
    pub fn find_in(text: &str) -> Option<Self> {
        let bytes = text.as_bytes();
        for (i, _) in text.match_indices(':') {
            let mut start = i;
            while start > 0 && bytes[start - 1].is_ascii_digit() && i - start < 2 {
                start -= 1;
            }
            let end = (i + 3).min(text.len());
            if start == i || end != i + 3 {
                continue;
            }
            let before_ok = start == 0 || !bytes[start - 1].is_ascii_digit();
            let after_ok = end == text.len() || !bytes[end].is_ascii_digit();
            if before_ok && after_ok {
                if let Some(t) = TimeOfDay::parse_exact(&text[start..end]) {
                    return Some(t);
                }
            }
        }
        None
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 60, self.0 % 60)
    }
}

/// An entity attribute value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Integer(i64),
    Time(TimeOfDay),
    Coordinate(f64, f64),
    /// Nested price map such as `{double: 75, family: 90, single: 50}`.
    PriceMap(IndexMap<String, String>),
}

impl Value {
    /// Interprets a JSON attribute from the database document.
    pub(crate) fn from_json(json: &Json) -> Result<Value, String> {
        match json {
            Json::String(s) => Ok(match TimeOfDay::parse_exact(s) {
                Some(t) if s.trim().len() == 5 => Value::Time(t),
                _ => Value::Text(s.clone()),
            }),
            Json::Number(n) => n
                .as_i64()
                .map(Value::Integer)
                .ok_or_else(|| format!("non-integer number {n}")),
            Json::Array(items) => match items.as_slice() {
                [Json::Number(a), Json::Number(b)] => Ok(Value::Coordinate(
                    a.as_f64().ok_or("bad latitude")?,
                    b.as_f64().ok_or("bad longitude")?,
                )),
                _ => Err("arrays must be [latitude, longitude] pairs".into()),
            },
            Json::Object(obj) => obj
                .iter()
                .map(|(k, v)| match v {
                    Json::String(s) => Ok((k.clone(), s.clone())),
                    Json::Number(n) => Ok((k.clone(), n.to_string())),
                    _ => Err(format!("price component '{k}' must be a string or number")),
                })
                .collect::<Result<_, _>>()
                .map(Value::PriceMap),
            Json::Bool(_) | Json::Null => Err("booleans and nulls are not valid attribute values".into()),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Time(t) => write!(f, "{t}"),
            Value::Coordinate(a, b) => write!(f, "[{a}, {b}]"),
            Value::PriceMap(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// Trim, lowercase and collapse inner whitespace.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn is_dontcare(normalized: &str) -> bool {
    matches!(normalized, "dontcare" | "don't care" | "dont care" | "do n't care")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_parsing() {
        assert_eq!(TimeOfDay::parse_exact("14:15").unwrap().minutes(), 14 * 60 + 15);
        assert_eq!(TimeOfDay::parse_exact("9:05").unwrap().to_string(), "09:05");
        assert!(TimeOfDay::parse_exact("24:00").is_none());
        assert!(TimeOfDay::parse_exact("14:5").is_none());
        assert_eq!(TimeOfDay::find_in("after 14:15").unwrap().to_string(), "14:15");
        assert_eq!(TimeOfDay::find_in("by 9:30 please").unwrap().to_string(), "09:30");
        assert!(TimeOfDay::find_in("ref 123:456").is_none());
        assert!(TimeOfDay::find_in("no time here").is_none());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  London   Kings Cross "), "london kings cross");
        assert!(is_dontcare(&normalize("Don't care")));
    }

    #[test]
    fn display_matches_observation_style() {
        let mut m = IndexMap::new();
        m.insert("double".to_string(), "75".to_string());
        m.insert("single".to_string(), "50".to_string());
        assert_eq!(Value::PriceMap(m).to_string(), "{double: 75, single: 50}");
        assert_eq!(Value::Coordinate(52.1725982, 0.1112224).to_string(), "[52.1725982, 0.1112224]");
    }
}
