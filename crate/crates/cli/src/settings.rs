//! Flat `key = value` settings shared by config files, command-line flags and
//! manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

pub type Settings = BTreeMap<String, String>;

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse(text: &str) -> Result<Settings, CliError> {
    let mut out = Settings::new();
    let mut problems = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                    problems.push(format!("line {}: duplicate key {:?}", n + 1, k.trim()));
                }
            }
            _ => problems.push(format!("line {}: expected key = value", n + 1)),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Validation(format!("invalid config: {}", problems.join("; "))))
    }
}

/// Reads a config file and makes its relative paths absolute. The stoplist
/// names `english` and `none` are left alone.
pub fn load(path: &Path, path_keys: &[&str]) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut settings = parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for key in path_keys {
        if let Some(v) = settings.get_mut(*key).filter(|v| !matches!(v.as_str(), "english" | "none" | "")) {
            *v = absolute(base, v).display().to_string();
        }
    }
    Ok(settings)
}

pub fn absolute(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

/// Typed access that collects every problem before failing.
pub struct Reader<'a> {
    settings: &'a Settings,
    used: BTreeSet<&'a str>,
    invalid: Vec<String>,
}

impl<'a> Reader<'a> {
    pub fn new(settings: &'a Settings) -> Self {
        Self { settings, used: BTreeSet::new(), invalid: Vec::new() }
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a str> {
        self.used.insert(key);
        self.settings.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&mut self, key: &'a str, default: T) -> T
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => default,
            Some(v) => v.parse().unwrap_or_else(|e| {
                self.invalid.push(format!("{key} = {v:?} ({e})"));
                default
            }),
        }
    }

    pub fn optional(&mut self, key: &'a str) -> Option<String> {
        self.raw(key).filter(|v| !v.is_empty()).map(String::from)
    }

    pub fn required(&mut self, key: &'a str) -> String {
        self.optional(key).unwrap_or_else(|| {
            self.invalid.push(format!("{key} is required"));
            String::new()
        })
    }

    /// Comma-separated list; empty when absent.
    pub fn list(&mut self, key: &'a str) -> Vec<String> {
        self.raw(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }

    pub fn check(&mut self, ok: bool, message: impl FnOnce() -> String) {
        if !ok {
            self.invalid.push(message());
        }
    }

    /// Fails listing unknown keys and invalid values.
    pub fn finish(self) -> Result<(), CliError> {
        let unknown: Vec<&str> =
            self.settings.keys().map(String::as_str).filter(|k| !self.used.contains(k)).collect();
        let mut parts = Vec::new();
        if !unknown.is_empty() {
            parts.push(format!("unknown keys: {}", unknown.join(", ")));
        }
        if !self.invalid.is_empty() {
            parts.push(format!("invalid values: {}", self.invalid.join("; ")));
        }
        if parts.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(format!("invalid config: {}", parts.join("; "))))
        }
    }
}
