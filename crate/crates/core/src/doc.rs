//! Relaxed key/value documents used as tool inputs.
//!
//! Models write tool inputs in a loose flow syntax: `{domain: hotel, state:
//! {hotel: {internet: yes, stars: 3}}}`. Keys and scalars may be bare or
//! quoted, and bare scalars may contain spaces and colons (`time: after
//! 14:15`). Strict JSON objects are a subset of this syntax.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A parsed input document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Doc {
    Scalar(String),
    List(Vec<Doc>),
    Map(IndexMap<String, Doc>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at offset {offset}")]
pub struct DocError {
    pub message: String,
    pub offset: usize,
}

impl Doc {
    pub fn empty_map() -> Self {
        Doc::Map(IndexMap::new())
    }

    pub fn as_map(&self) -> Option<&IndexMap<String, Doc>> {
        match self {
            Doc::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_scalar(&self) -> Option<&str> {
        match self {
            Doc::Scalar(s) => Some(s),
            _ => None,
        }
    }

    /// Looks up a key in a map document.
    pub fn get(&self, key: &str) -> Option<&Doc> {
        self.as_map().and_then(|m| m.get(key))
    }

    pub fn parse(input: &str) -> Result<Doc, DocError> {
        let mut p = Parser { src: input, pos: 0 };
        p.skip_ws();
        let doc = p.value(Context::Top)?;
        p.skip_ws();
        if p.pos != input.len() {
            return Err(p.error("trailing characters after document"));
        }
        Ok(doc)
    }
}

/// Renders in the same flow syntax the parser accepts; `Doc::parse` of the
/// rendering yields the original document.
impl fmt::Display for Doc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Doc::Scalar(s) => write_scalar(f, s),
            Doc::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
            Doc::Map(map) => {
                f.write_str("{")?;
                for (i, (k, v)) in map.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_scalar(f, k)?;
                    f.write_str(": ")?;
                    write!(f, "{v}")?;
                }
                f.write_str("}")
            }
        }
    }
}

fn needs_quotes(s: &str) -> bool {
    s.is_empty()
        || s.trim() != s
        || s.chars()
            .any(|c| matches!(c, ',' | ':' | '{' | '}' | '[' | ']' | '"' | '\'' | '\\') || c.is_control())
}

fn write_scalar(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    if needs_quotes(s) {
        // JSON string escaping is a strict subset of what the parser accepts.
        f.write_str(&serde_json::to_string(s).map_err(|_| fmt::Error)?)
    } else {
        f.write_str(s)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Context {
    Top,
    Key,
    MapValue,
    ListItem,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> DocError {
        DocError { message: message.to_string(), offset: self.pos }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, want: char) -> Result<(), DocError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            _ => Err(self.error(&format!("expected '{want}'"))),
        }
    }

    fn value(&mut self, ctx: Context) -> Result<Doc, DocError> {
        self.skip_ws();
        match self.peek() {
            Some('{') => self.map(),
            Some('[') => self.list(),
            Some('"') | Some('\'') => Ok(Doc::Scalar(self.quoted()?)),
            Some(_) => Ok(Doc::Scalar(self.bare(ctx)?)),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn map(&mut self) -> Result<Doc, DocError> {
        self.expect('{')?;
        let mut map = IndexMap::new();
        self.skip_ws();
        if self.peek() == Some('}') {
            self.bump();
            return Ok(Doc::Map(map));
        }
        loop {
            self.skip_ws();
            let key = match self.peek() {
                Some('"') | Some('\'') => self.quoted()?,
                Some(_) => self.bare(Context::Key)?,
                None => return Err(self.error("unterminated map")),
            };
            self.expect(':')?;
            let value = self.value(Context::MapValue)?;
            if map.insert(key, value).is_some() {
                return Err(self.error("duplicate key"));
            }
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some('}') => return Ok(Doc::Map(map)),
                _ => return Err(self.error("expected ',' or '}' in map")),
            }
        }
    }

    fn list(&mut self) -> Result<Doc, DocError> {
        self.expect('[')?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.bump();
            return Ok(Doc::List(items));
        }
        loop {
            items.push(self.value(Context::ListItem)?);
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(']') => return Ok(Doc::List(items)),
                _ => return Err(self.error("expected ',' or ']' in list")),
            }
        }
    }

    fn quoted(&mut self) -> Result<String, DocError> {
        let quote = self.bump().expect("caller checked quote");
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error("unterminated string")),
                Some(c) if c == quote => return Ok(out),
                Some('\\') => {
                    let esc = self.bump().ok_or_else(|| self.error("dangling escape"))?;
                    match esc {
                        'n' => out.push('\n'),
                        't' => out.push('\t'),
                        'r' => out.push('\r'),
                        'b' => out.push('\u{8}'),
                        'f' => out.push('\u{c}'),
                        '/' => out.push('/'),
                        'u' => out.push(self.unicode_escape()?),
                        other => out.push(other),
                    }
                }
                Some(c) => out.push(c),
            }
        }
    }

    fn hex4(&mut self) -> Result<u32, DocError> {
        let end = self.pos + 4;
        let hex = self.src.get(self.pos..end).ok_or_else(|| self.error("short unicode escape"))?;
        let v = u32::from_str_radix(hex, 16).map_err(|_| self.error("bad unicode escape"))?;
        self.pos = end;
        Ok(v)
    }

    fn unicode_escape(&mut self) -> Result<char, DocError> {
        let hi = self.hex4()?;
        if (0xD800..0xDC00).contains(&hi) {
            if self.src[self.pos..].starts_with("\\u") {
                self.pos += 2;
                let lo = self.hex4()?;
                let code = 0x10000 + ((hi - 0xD800) << 10) + (lo.wrapping_sub(0xDC00) & 0x3FF);
                return char::from_u32(code).ok_or_else(|| self.error("bad surrogate pair"));
            }
            return Err(self.error("lone surrogate"));
        }
        char::from_u32(hi).ok_or_else(|| self.error("bad unicode escape"))
    }

    /// Bare token: runs to the next structural delimiter for its context.
    /// Keys stop at ':'; values may contain ':' and stop at ',' or a closer.
    fn bare(&mut self, ctx: Context) -> Result<String, DocError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            let stop = match ctx {
                Context::Key => matches!(c, ':' | ',' | '{' | '}' | '[' | ']'),
                Context::MapValue | Context::ListItem => matches!(c, ',' | '{' | '}' | '[' | ']'),
                Context::Top => matches!(c, '{' | '}' | '[' | ']'),
            };
            if stop {
                break;
            }
            self.bump();
        }
        let token = self.src[start..self.pos].trim();
        if token.is_empty() {
            return Err(DocError { message: "empty token".into(), offset: start });
        }
        Ok(token.to_string())
    }
}
