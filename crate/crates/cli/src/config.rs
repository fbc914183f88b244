//! Flat `key = value` run configuration merged with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use taps_core::digest::hash_bytes;
use taps_core::Error;

/// Allowed keys with their defaults. An empty default means "unset".
pub type KeySpec = &'static [(&'static str, &'static str)];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

/// Parses a config file body. Keys outside `allowed` are rejected.
pub fn parse_config(text: &str, allowed: KeySpec) -> Result<BTreeMap<String, String>, Error> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::at_line("config", i + 1, "expected `key = value`"))?;
        let k = k.trim();
        if !allowed.iter().any(|(a, _)| *a == k) {
            return Err(Error::at_line("config", i + 1, format!("unknown key {k:?}")));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::at_line("config", i + 1, format!("duplicate key {k:?}")));
        }
    }
    Ok(out)
}

impl Settings {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(
        allowed: KeySpec,
        file: Option<&Path>,
        overrides: impl IntoIterator<Item = (&'static str, Option<String>)>,
    ) -> Result<Self, Error> {
        let mut values: BTreeMap<String, String> =
            allowed.iter().map(|(k, d)| (k.to_string(), d.to_string())).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            values.extend(parse_config(&text, allowed)?);
        }
        for (k, v) in overrides {
            debug_assert!(allowed.iter().any(|(a, _)| *a == k), "override for undeclared key {k}");
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T>(&self, key: &str) -> Result<T, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| Error::InvalidConfig(format!("{key} = {v:?}: {e}")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, Error> {
        self.path(key)
            .ok_or_else(|| Error::InvalidConfig(format!("{key} is required (flag or config file)")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, Error> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::InvalidConfig(format!("{key} = {v:?} is not a boolean"))),
        }
    }

    /// Sorted `key = value` lines of every resolved setting.
    pub fn canonical_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn digest(&self) -> String {
        hash_bytes(self.canonical_text().as_bytes())
    }
}
