//! Flat `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("unknown key `{key}`")]
    Unknown { key: String },
}

/// Parsed key-value pairs, remembering which keys have been consumed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(KvError::Syntax { line: n + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax { line: n + 1 });
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(KvError::Duplicate {
                    line: n + 1,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Sets or replaces a value; used to apply command-line overrides.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse().map_err(|_| KvError::Value {
                    key: key.to_string(),
                    value: v.clone(),
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fails on the first key (in sorted order) not covered by `known` or one of `prefixes`.
    pub fn reject_unknown(&self, known: &[&str], prefixes: &[&str]) -> Result<(), KvError> {
        match self
            .entries
            .keys()
            .find(|k| !known.contains(&k.as_str()) && !prefixes.iter().any(|p| k.starts_with(p)))
        {
            Some(key) => Err(KvError::Unknown { key: key.clone() }),
            None => Ok(()),
        }
    }

    /// Keys under `prefix`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KvConfig {
        KvConfig {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }
}
