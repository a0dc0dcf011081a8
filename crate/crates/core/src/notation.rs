//! The brace notation used for tool arguments and observations in agent
//! trajectories, e.g. `{'Model': 'SD-XL', 'Dimension': 'Race'}`,
//! `{Score: 0.900}` or `{'image_1.jpg', 'image_2.jpg'}`.
//!
//! Chat models are sloppy with this notation, so the parser accepts single,
//! double, backtick and typographic quotes, bare words, trailing commas, and
//! apostrophes inside single-quoted strings. Rendering is canonical: parsing
//! a rendered value gives the same value back.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write};

use serde::de::{self, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::ser::{SerializeMap, SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotationError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected character {found:?} at byte {at}")]
    Unexpected { found: char, at: usize },
    #[error("unterminated string starting at byte {at}")]
    UnterminatedString { at: usize },
    #[error("map keys must be scalars (byte {at})")]
    NonScalarKey { at: usize },
    #[error("mixed set and map entries (byte {at})")]
    MixedBraces { at: usize },
    #[error("trailing input at byte {at}")]
    Trailing { at: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    /// Quoted string; rendered with single quotes unless it contains one.
    Quoted(String),
    /// Unquoted token such as `SD-XL`, `0.900` or `...`.
    Bare(String),
    Map(Vec<(Value, Value)>),
    Set(Vec<Value>),
}

impl Value {
    pub fn quoted(s: impl Into<String>) -> Self {
        Value::Quoted(s.into())
    }

    pub fn bare(s: impl Into<String>) -> Self {
        Value::Bare(s.into())
    }

    /// Map with quoted keys.
    pub fn map<K: Into<String>>(entries: impl IntoIterator<Item = (K, Value)>) -> Self {
        Value::Map(
            entries
                .into_iter()
                .map(|(k, v)| (Value::Quoted(k.into()), v))
                .collect(),
        )
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Quoted(s) | Value::Bare(s) => Some(s),
            _ => None,
        }
    }

    pub fn entries(&self) -> Option<&[(Value, Value)]> {
        match self {
            Value::Map(e) => Some(e),
            _ => None,
        }
    }

    /// Case-insensitive key lookup on a map.
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries()?.iter().find_map(|(k, v)| {
            k.as_text()
                .filter(|k| k.trim().eq_ignore_ascii_case(key))
                .map(|_| v)
        })
    }

    /// Renders the canonical notation.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write_to(&mut out).expect("writing to a String");
        out
    }

    fn write_to(&self, out: &mut String) -> fmt::Result {
        match self {
            Value::Quoted(s) => write_quoted(out, s),
            Value::Bare(s) => out.write_str(s),
            Value::Map(entries) => {
                out.write_char('{')?;
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        out.write_str(", ")?;
                    }
                    k.write_to(out)?;
                    out.write_str(": ")?;
                    v.write_to(out)?;
                }
                out.write_char('}')
            }
            Value::Set(items) => {
                out.write_char('{')?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.write_str(", ")?;
                    }
                    v.write_to(out)?;
                }
                out.write_char('}')
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn write_quoted(out: &mut String, s: &str) -> fmt::Result {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    out.write_char(quote)?;
    for c in s.chars() {
        if c == quote || c == '\\' {
            out.write_char('\\')?;
        }
        out.write_char(c)?;
    }
    out.write_char(quote)
}

fn closing_quote(open: char) -> Option<char> {
    match open {
        '\'' | '`' => Some('\''),
        '"' => Some('"'),
        '‘' => Some('’'),
        '“' => Some('”'),
        _ => None,
    }
}

/// Parses a complete value; only whitespace may follow it.
pub fn parse(input: &str) -> Result<Value, NotationError> {
    let (value, used) = parse_prefix(input)?;
    let rest = &input[used..];
    match rest.char_indices().find(|(_, c)| !c.is_whitespace()) {
        None => Ok(value),
        Some((i, _)) => Err(NotationError::Trailing { at: used + i }),
    }
}

/// Parses one value at the start of `input` and returns it with the number
/// of bytes consumed. A top-level bare token ends at a comma or line break.
pub fn parse_prefix(input: &str) -> Result<(Value, usize), NotationError> {
    let mut p = Parser { src: input, pos: 0 };
    p.skip_ws();
    let value = p.value(Context::TopLevel)?;
    Ok((value, p.pos))
}

#[derive(Clone, Copy, PartialEq)]
enum Context {
    TopLevel,
    Key,
    Element,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn value(&mut self, ctx: Context) -> Result<Value, NotationError> {
        match self.peek() {
            None => Err(NotationError::UnexpectedEnd),
            Some('{') => self.braces(),
            Some(c) if closing_quote(c).is_some() => self.quoted(),
            Some(_) => self.bare(ctx),
        }
    }

    fn braces(&mut self) -> Result<Value, NotationError> {
        self.bump();
        self.skip_ws();
        if self.peek() == Some('}') {
            self.bump();
            return Ok(Value::Map(Vec::new()));
        }
        let mut map: Vec<(Value, Value)> = Vec::new();
        let mut set: Vec<Value> = Vec::new();
        let mut is_map: Option<bool> = None;
        loop {
            self.skip_ws();
            if self.peek() == Some('}') {
                // trailing comma
                self.bump();
                break;
            }
            let at = self.pos;
            let first = self.value(Context::Key)?;
            self.skip_ws();
            let entry_is_map = self.peek() == Some(':');
            match is_map {
                Some(m) if m != entry_is_map => return Err(NotationError::MixedBraces { at }),
                _ => is_map = Some(entry_is_map),
            }
            if entry_is_map {
                if !matches!(first, Value::Quoted(_) | Value::Bare(_)) {
                    return Err(NotationError::NonScalarKey { at });
                }
                self.bump();
                self.skip_ws();
                let value = self.value(Context::Element)?;
                map.push((first, value));
            } else {
                set.push(first);
            }
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some('}') => break,
                Some(found) => {
                    return Err(NotationError::Unexpected {
                        found,
                        at: self.pos - found.len_utf8(),
                    })
                }
                None => return Err(NotationError::UnexpectedEnd),
            }
        }
        Ok(if is_map == Some(false) {
            Value::Set(set)
        } else {
            Value::Map(map)
        })
    }

    fn quoted(&mut self) -> Result<Value, NotationError> {
        let start = self.pos;
        let open = self.bump().expect("caller peeked a quote");
        let close = closing_quote(open).expect("caller checked the quote");
        let mut out = String::new();
        loop {
            let c = self.bump().ok_or(NotationError::UnterminatedString { at: start })?;
            if c == '\\' {
                let escaped = self.bump().ok_or(NotationError::UnterminatedString { at: start })?;
                out.push(escaped);
                continue;
            }
            if c == close && self.closes_here() {
                return Ok(Value::Quoted(out));
            }
            out.push(c);
        }
    }

    /// A closing quote only terminates the string when followed by a
    /// delimiter; otherwise it is an apostrophe such as in "don't".
    fn closes_here(&self) -> bool {
        let rest = &self.src[self.pos..];
        match rest.chars().find(|c| *c != ' ' && *c != '\t') {
            None => true,
            Some(c) => matches!(c, ',' | '}' | ':' | ']' | ')' | '.' | '\n' | '\r' | ';'),
        }
    }

    fn bare(&mut self, ctx: Context) -> Result<Value, NotationError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            let stop = match ctx {
                Context::TopLevel => matches!(c, ',' | '\n' | '\r'),
                Context::Key => matches!(c, ',' | '}' | ':'),
                Context::Element => matches!(c, ',' | '}'),
            };
            if stop {
                break;
            }
            self.bump();
        }
        let token = self.src[start..self.pos].trim();
        if token.is_empty() {
            return match self.peek() {
                Some(found) => Err(NotationError::Unexpected { found, at: self.pos }),
                None => Err(NotationError::UnexpectedEnd),
            };
        }
        Ok(Value::Bare(token.to_string()))
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Quoted(t) | Value::Bare(t) => s.serialize_str(t),
            Value::Map(entries) => {
                let mut m = s.serialize_map(Some(entries.len()))?;
                for (k, v) in entries {
                    m.serialize_entry(k.as_text().unwrap_or_default(), v)?;
                }
                m.end()
            }
            Value::Set(items) => {
                let mut seq = s.serialize_seq(Some(items.len()))?;
                for v in items {
                    seq.serialize_element(v)?;
                }
                seq.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct ValueVisitor;

        impl<'de> Visitor<'de> for ValueVisitor {
            type Value = Value;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a string, number, map or sequence")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Value, E> {
                Ok(Value::Quoted(v.to_string()))
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Value, E> {
                Ok(Value::Bare(v.to_string()))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Value, E> {
                Ok(Value::Bare(v.to_string()))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Value, E> {
                Ok(Value::Bare(v.to_string()))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Value, E> {
                Ok(Value::Bare(v.to_string()))
            }

            fn visit_unit<E: de::Error>(self) -> Result<Value, E> {
                Ok(Value::Bare("None".to_string()))
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
                let mut items = Vec::new();
                while let Some(v) = seq.next_element()? {
                    items.push(v);
                }
                Ok(Value::Set(items))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    entries.push((Value::Quoted(k), v));
                }
                Ok(Value::Map(entries))
            }
        }

        d.deserialize_any(ValueVisitor)
    }
}
