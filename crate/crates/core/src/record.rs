//! Canonical flat key-value documents.
//!
//! Certificates, defense sidecars, experiment reports and MI records are all
//! written as `key = value` lines with keys sorted lexicographically and
//! reals printed with 17 significant digits, so equal content always gives
//! equal bytes. The syntax is a subset of TOML and is read back with the
//! `toml` parser.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Int(u64),
    Bool(bool),
    Text(String),
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}
impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v)
    }
}
impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as u64)
    }
}
impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}
impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}
impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

/// Format a real with 17 significant digits in a TOML-compatible form.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    entries: BTreeMap<String, Value>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.entries.insert(key.to_owned(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let rendered = match v {
                Value::Real(x) => format_real(*x),
                // TOML integers are signed 64-bit; larger values go as text.
                Value::Int(i) if *i > i64::MAX as u64 => quote(&i.to_string()),
                Value::Int(i) => i.to_string(),
                Value::Bool(b) => b.to_string(),
                Value::Text(s) => quote(s),
            };
            let _ = writeln!(out, "{k} = {rendered}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Format(format!("unparseable record: {e}")))?;
        let mut entries = BTreeMap::new();
        for (k, v) in table {
            let value = match v {
                toml::Value::Float(f) => Value::Real(f),
                toml::Value::Integer(i) if i >= 0 => Value::Int(i as u64),
                toml::Value::Integer(i) => Value::Real(i as f64),
                toml::Value::Boolean(b) => Value::Bool(b),
                toml::Value::String(s) => Value::Text(s),
                other => {
                    return Err(Error::Format(format!(
                        "key {k:?}: nested value {other} not allowed in a flat record"
                    )))
                }
            };
            entries.insert(k, value);
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn missing(key: &str) -> Error {
        Error::Format(format!("record is missing key {key:?}"))
    }

    pub fn real(&self, key: &str) -> Result<f64> {
        match self.get(key) {
            Some(Value::Real(v)) => Ok(*v),
            Some(Value::Int(i)) => Ok(*i as f64),
            Some(_) => Err(Error::Format(format!("key {key:?} is not a real"))),
            None => Err(Self::missing(key)),
        }
    }

    pub fn opt_real(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.real(key).map(Some),
        }
    }

    pub fn uint(&self, key: &str) -> Result<u64> {
        match self.get(key) {
            Some(Value::Int(i)) => Ok(*i),
            Some(Value::Text(s)) => s
                .parse()
                .map_err(|_| Error::Format(format!("key {key:?} is not an integer"))),
            Some(_) => Err(Error::Format(format!("key {key:?} is not an integer"))),
            None => Err(Self::missing(key)),
        }
    }

    pub fn boolean(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            Some(Value::Bool(b)) => Ok(*b),
            Some(_) => Err(Error::Format(format!("key {key:?} is not a boolean"))),
            None => Err(Self::missing(key)),
        }
    }

    pub fn text(&self, key: &str) -> Result<&str> {
        match self.get(key) {
            Some(Value::Text(s)) => Ok(s),
            Some(_) => Err(Error::Format(format!("key {key:?} is not text"))),
            None => Err(Self::missing(key)),
        }
    }
}
