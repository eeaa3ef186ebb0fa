//! Flat `key = value` configuration files (a TOML subset: top-level
//! scalars only). Every key that a run actually consulted is echoed into
//! its manifest, including defaulted values.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct FlatConfig {
    values: BTreeMap<String, toml::Value>,
    /// Keys consulted so far with their resolved values.
    consulted: RefCell<BTreeMap<String, String>>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("parse error: {e}")))?;
        let mut values = BTreeMap::new();
        for (k, v) in table {
            match v {
                toml::Value::Table(_) | toml::Value::Array(_) => {
                    return Err(Error::Config(format!(
                        "key '{k}': only flat scalar keys are supported"
                    )));
                }
                other => {
                    values.insert(k, other);
                }
            }
        }
        Ok(Self {
            values,
            consulted: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Result<Self> {
        let text: String = pairs
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        Self::parse(&text)
    }

    fn note(&self, key: &str, value: String) {
        self.consulted.borrow_mut().insert(key.to_string(), value);
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        let v = match self.values.get(key) {
            None => default,
            Some(toml::Value::Float(x)) => *x,
            Some(toml::Value::Integer(x)) => *x as f64,
            Some(other) => {
                return Err(Error::Config(format!("key '{key}': expected number, got {other}")))
            }
        };
        self.note(key, format!("{v}"));
        Ok(v)
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        let v = match self.values.get(key) {
            None => default,
            Some(toml::Value::Integer(x)) if *x >= 0 => *x as usize,
            Some(other) => {
                return Err(Error::Config(format!(
                    "key '{key}': expected nonnegative integer, got {other}"
                )))
            }
        };
        self.note(key, format!("{v}"));
        Ok(v)
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64> {
        let v = match self.values.get(key) {
            None => default,
            Some(toml::Value::Integer(x)) if *x >= 0 => *x as u64,
            Some(other) => {
                return Err(Error::Config(format!(
                    "key '{key}': expected nonnegative integer, got {other}"
                )))
            }
        };
        self.note(key, format!("{v}"));
        Ok(v)
    }

    pub fn string(&self, key: &str, default: &str) -> Result<String> {
        let v = match self.values.get(key) {
            None => default.to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => {
                return Err(Error::Config(format!("key '{key}': expected string, got {other}")))
            }
        };
        self.note(key, v.clone());
        Ok(v)
    }

    /// All keys consulted so far with resolved values, for the manifest.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.consulted.borrow().clone()
    }

    /// Keys present in the file that were never consulted (likely typos).
    pub fn unused_keys(&self) -> Vec<String> {
        let consulted = self.consulted.borrow();
        self.values
            .keys()
            .filter(|k| !consulted.contains_key(*k))
            .cloned()
            .collect()
    }
}
