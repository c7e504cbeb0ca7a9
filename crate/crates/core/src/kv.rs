//! Line-oriented `key = value` text used by calibration, scene and run files.
//!
//! Blank lines and `#` comments are skipped. Keys are unique; a repeated key
//! is a parse error.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse { line, msg: "empty key".into() });
            }
            if entries.insert(key.clone(), (line, value.trim().to_string())).is_some() {
                return Err(Error::Parse { line, msg: format!("duplicate key `{key}`") });
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Fails on the first key not accepted by `allowed`.
    pub fn reject_unknown(&self, allowed: impl Fn(&str) -> bool) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !allowed(key) {
                return Err(Error::Parse { line: *line, msg: format!("unknown key `{key}`") });
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|(l, _)| *l).unwrap_or(0)
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.str(key)?;
        raw.parse().map_err(|_| Error::Parse {
            line: self.line_of(key),
            msg: format!("cannot parse `{raw}` for `{key}`"),
        })
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        if self.contains(key) {
            self.get(key)
        } else {
            Ok(default)
        }
    }

    /// Whitespace-separated numbers of any count.
    pub fn float_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.str(key)?;
        raw.split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::Parse { line: self.line_of(key), msg: format!("`{key}` needs numbers, got `{raw}`") })
    }

    pub fn floats<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let raw = self.str(key)?;
        let parsed: std::result::Result<Vec<f64>, _> =
            raw.split_whitespace().map(str::parse::<f64>).collect();
        let err = || Error::Parse {
            line: self.line_of(key),
            msg: format!("`{key}` needs {N} numbers, got `{raw}`"),
        };
        let values = parsed.map_err(|_| err())?;
        values.try_into().map_err(|_| err())
    }
}

/// Writer counterpart of [`KvDoc`]. Floats use the shortest representation
/// that parses back to the same value.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.out.push_str("# ");
        self.out.push_str(text);
        self.out.push('\n');
        self
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn floats(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
        self.put(key, joined.join(" "))
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.out)
    }
}
