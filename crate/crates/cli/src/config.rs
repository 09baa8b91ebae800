//! Flat `key = value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Bad configuration; maps to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(ConfigError(msg.into()))
}

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(invalid(format!("config line {}: expected key = value", i + 1)));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(invalid(format!("config line {}: empty key", i + 1)));
        }
        if out.iter().any(|(seen, _)| *seen == key) {
            return Err(invalid(format!("config line {}: duplicate key {key}", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Resolved settings. Every key must be consumed by the subcommand; leftovers
/// are reported as unknown.
#[derive(Debug, Default)]
pub struct Settings {
    raw: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(file: Option<&Path>, flags: Vec<(&str, Option<String>)>, sets: &[String]) -> Result<Self> {
        let mut raw = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
            raw.extend(parse_config(&text)?);
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| invalid(format!("--set expects key=value, got {s:?}")))?;
            raw.insert(k.trim().to_string(), v.trim().to_string());
        }
        for (k, v) in flags {
            if let Some(v) = v {
                raw.insert(k.to_string(), v);
            }
        }
        Ok(Self { raw, resolved: BTreeMap::new() })
    }

    fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
    where
        T::Err: Display,
    {
        v.parse::<T>().map_err(|e| invalid(format!("{key} = {v:?}: {e}")))
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match self.raw.remove(key) {
            Some(v) => Self::parse(key, &v)?,
            None => default,
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw.remove(key) {
            Some(v) => {
                let t: T = Self::parse(key, &v)?;
                self.resolved.insert(key.to_string(), t.to_string());
                Ok(Some(t))
            }
            None => Ok(None),
        }
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get_opt(key)?.ok_or_else(|| invalid(format!("missing required key {key}")))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr + Display>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let v = match self.raw.remove(key) {
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Self::parse(key, s))
                .collect::<Result<Vec<T>>>()?,
            None => default,
        };
        let echo: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        self.resolved.insert(key.to_string(), echo.join(","));
        Ok(v)
    }

    /// Fails on keys nobody asked for; returns the resolved values for echoing.
    pub fn finish(self) -> Result<BTreeMap<String, String>> {
        if let Some(k) = self.raw.keys().next() {
            bail!(ConfigError(format!("unknown key {k}")));
        }
        Ok(self.resolved)
    }
}

pub fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg))
    }
}

pub fn read_file(path: &str) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {path}"))
}
