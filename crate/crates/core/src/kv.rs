//! Flat `key=value` text files used for checkpoint sidecars and run configs.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::data_at(i + 1, format!("expected key=value, found '{line}'")))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::data_at(i + 1, "empty key"));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::data_at(i + 1, format!("duplicate key '{k}'")));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn set_list(&mut self, key: impl Into<String>, values: &[f64]) {
        let joined = values.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        self.entries.insert(key.into(), joined);
    }

    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Config(format!("invalid value '{v}' for key '{key}'"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing key '{key}'")))
    }

    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("invalid number '{x}' in '{key}'"))))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    pub fn require_array<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let v = self.get_list(key)?.ok_or_else(|| Error::Config(format!("missing key '{key}'")))?;
        v.try_into().map_err(|v: Vec<f64>| Error::Config(format!("'{key}' needs {N} values, got {}", v.len())))
    }

    /// Serializes with keys in sorted order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}
