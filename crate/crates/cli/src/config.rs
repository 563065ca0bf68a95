//! Flat `key = value` configuration files with dotted section prefixes.
//!
//! ```text
//! # comment
//! seeds = 1, 2, 3
//! data.bias_rho = 0.95
//! teacher.hidden = 32, 32
//! ```
//!
//! Later assignments override earlier ones, so a preset can be extended by
//! appending a user file. Every key must be consumed by the reader; leftover
//! keys are reported as unknown.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.extend(text)?;
        Ok(cfg)
    }

    /// Applies the assignments in `text` on top of the current values.
    pub fn extend(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let valid = !key.is_empty()
                && key.split('.').all(|part| {
                    !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                });
            if !valid {
                return Err(CliError::Config {
                    line: i + 1,
                    message: format!("invalid key `{key}`"),
                });
            }
            self.values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.values.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| CliError::BadValue {
                    key: key.to_string(),
                    message: format!("`{v}`: {e}"),
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_str(&self, key: &str) -> Option<String> {
        self.raw(key).map(str::to_string)
    }

    /// Comma-separated list; an empty value gives an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| CliError::BadValue {
                    key: key.to_string(),
                    message: format!("`{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Errors on the first key no reader asked for.
    pub fn ensure_all_used(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.values.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(CliError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }

    /// All assignments in key order, one per line.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
